"""Environment builders and a name-based preset registry."""
from __future__ import annotations

from dataclasses import fields

from .bandit import build_bandit
from .interleaving import InterleavingConfig, build_interleaving
from .key_to_door import (
    KeyToDoorConfig,
    aliasing_config,
    build_key_to_door,
    reward_switching_config,
    treasure_probability,
)
from .toy import build_bit_reward, build_chain, build_coin_flip
from .tree import TreeConfig, build_tree, tree_group_encoding

PRESETS = {
    "key-to-door": KeyToDoorConfig,
    "key-to-door-aliasing": aliasing_config,
    "key-to-door-switching": reward_switching_config,
    "tree": TreeConfig,
    "interleaving": InterleavingConfig,
    "interleaving-tiny": InterleavingConfig.tiny,
}


def make_config(name: str, **overrides):
    """Preset config with overrides; unknown keys raise ``TypeError``."""
    if name == "bandit":
        if overrides:
            raise TypeError("the bandit preset takes no parameters")
        return None
    if name not in PRESETS:
        raise KeyError(f"unknown environment preset {name!r}; choose from {sorted([*PRESETS, 'bandit'])}")
    valid = {f.name for f in fields(PRESETS[name]())}
    unknown = set(overrides) - valid
    if unknown:
        raise TypeError(f"unknown parameters for {name}: {sorted(unknown)}")
    return PRESETS[name](**overrides)


def make_env(name: str, **overrides):
    cfg = make_config(name, **overrides)
    if name == "bandit":
        return build_bandit()
    if name.startswith("key-to-door"):
        return build_key_to_door(cfg)
    if name == "tree":
        return build_tree(cfg)
    return build_interleaving(cfg)


__all__ = [
    "InterleavingConfig", "KeyToDoorConfig", "TreeConfig", "aliasing_config", "build_bandit",
    "build_bit_reward", "build_chain", "build_coin_flip", "build_interleaving", "build_key_to_door",
    "build_tree", "make_config", "make_env", "reward_switching_config", "treasure_probability",
    "tree_group_encoding",
]
