"""Linear key-to-door track with distractor apples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import TabularMDP, enumerate_mdp

PICK_KEY, PICK_LEFT, PICK_RIGHT, OPEN_DOOR = range(4)
ACTION_NAMES = ("pick-key", "pick-left", "pick-right", "open-door")

# item slots of the feature vector, after the relative position
ITEMS = ("empty", "apple-left", "apple-right", "door", "key", "treasure")


@dataclass(frozen=True)
class KeyToDoorConfig:
    """Track of ``length`` positions; one step per position.

    Position 0 holds the key, the last position holds the treasure and, when
    ``door_required``, the door sits one position before it. All other
    positions hold an apple on a side fixed by ``env_seed``.
    """

    length: int = 20
    distractor_values: tuple[float, float] | None = None
    treasure_value: float | None = None
    door_required: bool = True
    treasure_sign: float = 1.0
    treasure_sign_flip_episode: int | None = None
    env_seed: int = 0

    def __post_init__(self):
        if self.length < 4:
            raise ValueError("key-to-door needs length >= 4")
        vals = [*self.distractors, self.treasure]
        if not np.all(np.isfinite(vals)):
            raise ValueError("reward values must be finite")

    @property
    def distractors(self) -> tuple[float, float]:
        if self.distractor_values is not None:
            return tuple(float(v) for v in self.distractor_values)
        return (2.0 / self.length, 18.0 / self.length)

    @property
    def treasure(self) -> float:
        return 4.0 / self.length if self.treasure_value is None else float(self.treasure_value)

    @property
    def door_position(self) -> int | None:
        return self.length - 2 if self.door_required else None

    @property
    def apple_positions(self) -> range:
        return range(1, self.length - 2 if self.door_required else self.length - 1)

    def apple_sides(self) -> dict[int, int]:
        """Position -> rewarded action (PICK_LEFT or PICK_RIGHT)."""
        rng = np.random.default_rng(self.env_seed)
        draws = rng.integers(0, 2, size=len(self.apple_positions))
        return {p: PICK_LEFT + int(d) for p, d in zip(self.apple_positions, draws)}


def aliasing_config(length: int = 100, **kw) -> KeyToDoorConfig:
    """Treasure worth exactly the low distractor value."""
    kw.setdefault("treasure_value", 2.0 / length)
    return KeyToDoorConfig(length=length, **kw)


def reward_switching_config(length: int = 40, **kw) -> KeyToDoorConfig:
    """Door-less track: the key alone yields the treasure."""
    kw.setdefault("door_required", False)
    return KeyToDoorConfig(length=length, **kw)


def build_key_to_door(config: KeyToDoorConfig) -> TabularMDP:
    """Enumerate the track as a :class:`TabularMDP`.

    States are ``(position, has_key, treasure)`` tuples where ``treasure``
    is only meaningful at the last position and records whether the treasure
    is present there. ``info["treasure_states"]`` marks those states.
    """
    L = config.length
    sides = config.apple_sides()
    lo, hi = config.distractors
    treasure = config.treasure * config.treasure_sign
    door = config.door_position

    def step(state, action):
        pos, has_key, opened = state
        if pos == L - 1:
            reward = treasure if opened else 0.0
            return [(None, 1.0)], [(reward, 1.0)]
        if pos == 0:
            nxt_key = action == PICK_KEY
        else:
            nxt_key = has_key
        if pos in sides and action == sides[pos]:
            rewards = [(lo, 0.5), (hi, 0.5)]
        else:
            rewards = [(0.0, 1.0)]
        if pos + 1 == L - 1:
            # arriving at the treasure: decide whether it is collectable
            got = nxt_key and (action == OPEN_DOOR if door is not None else True)
            nxt = (L - 1, nxt_key, bool(got))
        else:
            nxt = (pos + 1, nxt_key, False)
        return [(nxt, 1.0)], rewards

    def features(state):
        pos, has_key, opened = state
        f = np.zeros(9)
        f[0] = pos / (L - 1)
        if pos == 0:
            item = "key"
        elif pos == L - 1:
            item = "treasure" if opened else "empty"
        elif pos == door:
            item = "door"
        elif pos in sides:
            item = "apple-left" if sides[pos] == PICK_LEFT else "apple-right"
        else:
            item = "empty"
        f[1 + ITEMS.index(item)] = 1.0
        f[7] = float(has_key)
        f[8] = float(not has_key)
        return f

    mdp = enumerate_mdp(
        (0, False, False), 4, step, horizon=L, features=features, feature_dim=9,
        name=f"key-to-door-{L}",
        info={"config": config, "apple_sides": sides},
    )
    labels = mdp.state_labels
    mdp.info["treasure_states"] = np.array(
        [isinstance(l, tuple) and l[0] == L - 1 and l[2] for l in labels], dtype=bool
    )
    mdp.info["key_states"] = np.array([isinstance(l, tuple) and l[0] == 0 for l in labels], dtype=bool)
    return mdp


def treasure_probability(mdp: TabularMDP, probs: np.ndarray) -> float:
    """Probability of reaching a collectable treasure under ``probs``."""
    from ..dp import state_visits

    return float(state_visits(mdp, probs)[mdp.info["treasure_states"]].sum())
