"""Tree environment with tunable child overlap and grouped reward encodings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encodings import OutcomeEncoding, encoding_from_function
from ..mdp import TabularMDP, enumerate_mdp

DEFAULT_PRIME = 999331


@dataclass(frozen=True)
class TreeConfig:
    depth: int = 4
    num_actions: int = 6
    state_overlap: int = 0
    num_rewards: int = 5
    group_count: int = 1
    prime: int = DEFAULT_PRIME
    env_seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0 <= self.state_overlap < self.num_actions:
            raise ValueError("need 0 <= state_overlap < num_actions")

    def level_widths(self) -> list[int]:
        widths = [1]
        for _ in range(1, self.depth):
            widths.append((widths[-1] - 1) * (self.num_actions - self.state_overlap) + self.num_actions)
        return widths

    def level_offsets(self) -> list[int]:
        return [0, *np.cumsum(self.level_widths())[:-1].tolist()]


def tree_index(config: TreeConfig, i: int, j: int) -> int:
    """Breadth-first index of node ``(i, j)``."""
    return config.level_offsets()[i] + j


def tree_reward(config: TreeConfig, idx: int, action: int) -> int:
    n_r = config.num_rewards
    return (idx + action * config.prime + config.env_seed) % n_r - n_r // 2


def tree_group(config: TreeConfig, idx: int, action: int, group_count: int | None = None) -> int:
    n_r = config.num_rewards
    n_g = config.group_count if group_count is None else group_count
    return (idx + action * config.prime + config.env_seed) % (n_r * n_g) - n_r // 2


def build_tree(config: TreeConfig) -> TabularMDP:
    offsets = config.level_offsets()
    step_size = config.num_actions - config.state_overlap

    def step(state, action):
        i, j = state
        r = tree_reward(config, offsets[i] + j, action)
        nxt = None if i + 1 >= config.depth else (i + 1, j * step_size + action)
        return [(nxt, 1.0)], [(float(r), 1.0)]

    def features(state):
        i, j = state
        return np.array([i / max(config.depth - 1, 1), j / max(config.level_widths()[i] - 1, 1)])

    return enumerate_mdp(
        (0, 0), config.num_actions, step, horizon=config.depth, features=features, feature_dim=2,
        name=f"tree-d{config.depth}-a{config.num_actions}-o{config.state_overlap}",
        info={"config": config},
    )


def tree_group_encoding(mdp: TabularMDP, config: TreeConfig, group_count: int | None = None) -> OutcomeEncoding:
    """Outcome ``u`` from the grouping rule; ``n_g`` groups per reward level."""
    n_g = config.group_count if group_count is None else group_count
    offsets = config.level_offsets()

    def fn(s, a, r):
        i, j = mdp.state_labels[s]
        return tree_group(config, offsets[i] + j, a, n_g)

    enc = encoding_from_function(mdp, fn, kind=f"tree-group-{n_g}")
    return enc


def group_to_reward(config: TreeConfig, u: int) -> int:
    n_r = config.num_rewards
    return (u + n_r // 2) % n_r - n_r // 2
