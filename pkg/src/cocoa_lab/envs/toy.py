"""Tiny hand-made MDPs used as exact test fixtures."""
from __future__ import annotations

import numpy as np

from ..mdp import TabularMDP


def build_chain(length: int = 3, num_actions: int = 1, rewards=None) -> TabularMDP:
    """Deterministic chain ``s0 -> s1 -> ... -> absorbing``; ``rewards[t]`` at step t."""
    rewards = [0.0] * length if rewards is None else list(rewards)
    z = length
    transitions, reward_lists = [], []
    for s in range(length):
        nxt = s + 1 if s + 1 < length else z
        transitions.append([[(nxt, 1.0)] for _ in range(num_actions)])
        reward_lists.append([[(float(rewards[s]), 1.0)] for _ in range(num_actions)])
    transitions.append([[(z, 1.0)] for _ in range(num_actions)])
    reward_lists.append([[(0.0, 1.0)] for _ in range(num_actions)])
    return TabularMDP.from_lists(transitions, reward_lists, 0, z, horizon=length, name=f"chain-{length}")


def build_coin_flip() -> TabularMDP:
    """``s0`` moves to ``s1`` or ``s2`` with probability 1/2; both then absorb."""
    transitions = [
        [[(1, 0.5), (2, 0.5)]],
        [[(3, 1.0)]],
        [[(3, 1.0)]],
        [[(3, 1.0)]],
    ]
    rewards = [[[(0.0, 1.0)]], [[(1.0, 1.0)]], [[(0.0, 1.0)]], [[(0.0, 1.0)]]]
    return TabularMDP.from_lists(transitions, rewards, 0, 3, horizon=2, name="coin-flip")


def build_bit_reward(num_states: int = 8, num_bits: int = 4, seed: int = 0, reward: float = 1.0) -> TabularMDP:
    """Random binary features; the reward is ``reward`` iff feature bit 0 is set.

    Two actions, uniform random transitions among ``num_states`` states for a
    horizon of 3 steps (a step counter keeps the MDP acyclic).
    """
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(num_states, num_bits)).astype(float)
    bits[0, 0], bits[1, 0] = 1.0, 0.0
    horizon = 3
    S = num_states * horizon + 1
    z = S - 1
    feats = np.zeros((S, num_bits))
    transitions, rewards = [], []
    for t in range(horizon):
        for k in range(num_states):
            feats[t * num_states + k] = bits[k]
            row = []
            for a in range(2):
                if t + 1 < horizon:
                    row.append([((t + 1) * num_states + m, 1.0 / num_states) for m in range(num_states)])
                else:
                    row.append([(z, 1.0)])
            transitions.append(row)
            r = reward if bits[k, 0] else 0.0
            rewards.append([[(r, 1.0)], [(r, 1.0)]])
    transitions.append([[(z, 1.0)], [(z, 1.0)]])
    rewards.append([[(0.0, 1.0)], [(0.0, 1.0)]])
    return TabularMDP.from_lists(transitions, rewards, 0, z, horizon=horizon, state_features=feats, name="bit-reward")
