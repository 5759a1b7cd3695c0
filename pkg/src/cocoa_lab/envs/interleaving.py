"""Interleaved contextual bandits with delayed, context-tagged rewards."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from ..mdp import TabularMDP, enumerate_mdp

LEFT, RIGHT = 0, 1
LOBBY = ("lobby",)


@dataclass(frozen=True)
class InterleavingConfig:
    """``num_contexts`` tasks, at most ``max_open`` pending at once.

    Each context owns ``objects_per_context`` rewarding and as many
    unrewarding objects. Every step survives with ``continue_prob``.
    """

    num_contexts: int = 5
    max_open: int = 3
    objects_per_context: int = 2
    continue_prob: float = 0.95
    context_rewards: tuple[float, ...] | None = None
    tail_tolerance: float = 1e-12
    max_states: int = 200_000

    def __post_init__(self):
        if self.num_contexts < 1 or self.max_open < 1 or self.objects_per_context < 1:
            raise ValueError("contexts, open slots and objects must be positive")
        if not 0.0 < self.continue_prob < 1.0:
            raise ValueError("continue_prob must lie in (0, 1)")

    @classmethod
    def tiny(cls, **kw) -> "InterleavingConfig":
        return cls(**{"num_contexts": 2, "max_open": 2, "objects_per_context": 1, **kw})

    def reward_of(self, context: int) -> float:
        if self.context_rewards is None:
            return 1.0
        return float(self.context_rewards[context])

    @property
    def horizon(self) -> int:
        """Steps after which the survival probability is below ``tail_tolerance``."""
        return int(math.ceil(math.log(self.tail_tolerance) / math.log(self.continue_prob)))


class InterleavingDynamics:
    """Generative dynamics over hashable states.

    A state is ``(open, context, room)`` where ``open`` is a sorted tuple of
    ``(context, key)`` pairs and ``room`` is ``("answer",)`` or
    ``("query", rewarding_obj, other_obj, rewarding_side)``. The start state
    is a lobby that leads to the first query room.
    """

    def __init__(self, config: InterleavingConfig):
        self.config = config

    def _next_rooms(self, open_pairs):
        cfg = self.config
        open_ctx = [c for c, _ in open_pairs]
        closed = [c for c in range(cfg.num_contexts) if c not in open_ctx]
        p_open = len(open_ctx) / cfg.max_open if closed else 1.0
        out = []
        if open_ctx and p_open > 0:
            for c in open_ctx:
                out.append(((open_pairs, c, ("answer",)), p_open / len(open_ctx)))
        if closed and p_open < 1:
            O = cfg.objects_per_context
            q = (1 - p_open) / (len(closed) * O * O * 2)
            for c, good, bad, side in product(closed, range(O), range(O), (LEFT, RIGHT)):
                out.append(((open_pairs, c, ("query", good, bad, side)), q))
        return out

    def step(self, state, action):
        cfg = self.config
        if state == LOBBY:
            succ, reward, open_pairs = None, 0.0, ()
        else:
            open_pairs, ctx, room = state
            if room[0] == "answer":
                key = dict(open_pairs)[ctx]
                reward = cfg.reward_of(ctx) if key else 0.0
                open_pairs = tuple(p for p in open_pairs if p[0] != ctx)
            else:
                reward = 0.0
                correct = action == room[3]
                open_pairs = tuple(sorted((*open_pairs, (ctx, bool(correct)))))
        g = cfg.continue_prob
        succ = [(s, g * p) for s, p in self._next_rooms(open_pairs)]
        succ.append((None, 1.0 - g))
        return succ, [(reward, 1.0)]

    def features(self, state) -> np.ndarray:
        """One-hot context/room blocks plus open-context and key bits."""
        cfg = self.config
        C, O = cfg.num_contexts, cfg.objects_per_context
        f = np.zeros(self.feature_dim)
        if state == LOBBY:
            f[-1] = 1.0
            return f
        open_pairs, ctx, room = state
        f[ctx] = 1.0
        f[C] = float(room[0] == "answer")
        for c, key in open_pairs:
            f[C + 1 + c] = 1.0
            f[2 * C + 1 + c] = float(key)
        if room[0] == "query":
            _, good, bad, side = room
            base = 3 * C + 1
            # left and right object identities, one-hot over 2*O objects
            left, right = (good, O + bad) if side == LEFT else (O + bad, good)
            f[base + left] = 1.0
            f[base + 2 * O + right] = 1.0
        return f

    @property
    def feature_dim(self) -> int:
        C, O = self.config.num_contexts, self.config.objects_per_context
        return 3 * C + 1 + 4 * O + 1


def build_interleaving(config: InterleavingConfig) -> TabularMDP:
    """Enumerate the environment; raises ``StateSpaceTooLarge`` past the cap."""
    dyn = InterleavingDynamics(config)
    mdp = enumerate_mdp(
        LOBBY, 2, dyn.step, horizon=config.horizon, features=dyn.features,
        feature_dim=dyn.feature_dim, max_states=config.max_states,
        name=f"interleaving-C{config.num_contexts}-B{config.max_open}-O{config.objects_per_context}",
        info={"config": config},
    )
    labels = mdp.state_labels
    mdp.info["query_states"] = np.array([isinstance(l, tuple) and len(l) == 3 and l[2][0] == "query" for l in labels])
    mdp.info["correct_action"] = np.array(
        [l[2][3] if isinstance(l, tuple) and len(l) == 3 and l[2][0] == "query" else -1 for l in labels]
    )
    return mdp


def simulate(dynamics: InterleavingDynamics, action_fn, rng: np.random.Generator, max_steps: int):
    """Roll out one episode without enumeration; returns ``(states, actions, rewards)``."""
    state = LOBBY
    states, actions, rewards = [], [], []
    for _ in range(max_steps):
        a = int(action_fn(state, rng))
        succ, rew = dynamics.step(state, a)
        states.append(state)
        actions.append(a)
        rewards.append(rew[0][0])
        probs = np.array([p for _, p in succ])
        k = rng.choice(len(succ), p=probs / probs.sum())
        state = succ[k][0]
        if state is None:
            break
    return states, actions, rewards
