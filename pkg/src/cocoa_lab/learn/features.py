"""Learned reward features turned into a discrete outcome encoding."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..encodings import OutcomeEncoding
from ..funcapprox import AdamW, MaskedRewardModel
from ..mdp import TabularMDP, TrajectoryBatch


class FeatureCollisionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    """Pretraining settings; ``steps`` full-batch updates on ``batches`` buffered mini-batches."""

    batches: int = 30
    steps: int = 20000
    l1: float = 0.001
    l2: float = 0.03
    lr: float = 0.01
    batch_size: int = 8
    reduction: str = "minibatch"

    @classmethod
    def for_env(cls, name: str, **kw) -> "FeatureConfig":
        if name.startswith("interleaving"):
            base = dict(batches=90, steps=30000, l1=0.05, l2=0.0003)
        else:
            base = {}
        return cls(**{**base, **kw})


@dataclass
class FeatureResult:
    encoding: OutcomeEncoding
    model: MaskedRewardModel
    params: np.ndarray
    loss: float
    collisions: list = field(default_factory=list)


def _reward_dist(mdp: TabularMDP, s: int, a: int) -> dict:
    out: dict[float, float] = {}
    for v, p in zip(mdp.reward_values[s, a], mdp.reward_probs[s, a]):
        if p > 0:
            out[float(v)] = out.get(float(v), 0.0) + float(p)
    return out


def collision_report(mdp: TabularMDP, encoding: OutcomeEncoding, pairs, atol: float = 1e-12) -> list[tuple]:
    """``(u, (s1, a1), (s2, a2))`` for buffered pairs sharing ``u`` but not ``p(r | s, a)``."""
    first: dict[int, tuple] = {}
    bad = []
    for s, a in pairs:
        u = int(encoding.table[s, a, 0])
        d = _reward_dist(mdp, s, a)
        if u not in first:
            first[u] = ((s, a), d)
            continue
        where, ref = first[u]
        if any(abs(ref.get(k, 0.0) - d.get(k, 0.0)) > atol for k in set(ref) | set(d)):
            bad.append((u, where, (s, a)))
    return bad


def reward_feature_pipeline(mdp: TabularMDP, buffer: TrajectoryBatch, config: FeatureConfig = FeatureConfig(),
                            rng: np.random.Generator | None = None) -> FeatureResult:
    """Fit the masked reward model on ``buffer`` and bin its thresholded activations.

    Every live ``(s, a)`` gets the outcome id of its bit vector; identical
    vectors share an id. Rewards are assumed not to change the bits, so all
    reward-support entries of a pair map to the same outcome.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    X = mdp.state_features
    model = MaskedRewardModel(X.shape[1], mdp.num_actions)
    params = model.init(rng)
    m = buffer.mask
    s, a, r = buffer.states[m], buffer.actions[m], buffer.rewards[m]
    opt = AdamW(lr=config.lr)
    # the squared error only sees per-pair counts, means and second moments
    A_ = mdp.num_actions
    key = s * A_ + a
    uniq, inv, cnt = np.unique(key, return_inverse=True, return_counts=True)
    mean_r = np.bincount(inv, weights=r) / cnt
    noise = float(np.sum(cnt * (np.bincount(inv, weights=r * r) / cnt - mean_r ** 2)) / max(cnt.sum(), 1))
    x, acts = X[uniq // A_], uniq % A_
    scale = {"sum": float(cnt.sum()), "episode": cnt.sum() / len(buffer),
             "minibatch": cnt.sum() * config.batch_size / len(buffer), "mean": 1.0}[config.reduction]
    loss = 0.0
    for _ in range(config.steps):
        loss, grad = model.loss_and_grad(params, x, acts, mean_r, cnt)
        loss, grad = (loss + noise) * scale, grad * scale
        pen, pgrad = model.penalty_and_grad(params, config.l1, config.l2)
        params = opt.step(params, grad + pgrad)
        loss += pen

    S, A, J = mdp.reward_values.shape
    table = np.zeros((S, A, J), dtype=np.int64)
    ids: dict[bytes, int] = {}
    labels = []
    for st in range(S):
        if st == mdp.absorbing_state:
            continue
        bits = model.features(params, np.broadcast_to(X[st], (A, X.shape[1])), np.arange(A))
        for act in range(A):
            key = np.packbits(bits[act]).tobytes()
            if key not in ids:
                ids[key] = len(ids)
                labels.append(tuple(np.flatnonzero(bits[act]).tolist()))
            table[st, act, :] = ids[key]
    if not ids:
        labels.append(())
    enc = OutcomeEncoding("feature-bin", table, max(len(ids), 1), labels=labels)
    pairs = sorted(set(zip(s.tolist(), a.tolist())))
    collisions = collision_report(mdp, enc, pairs)
    if collisions:
        warnings.warn(
            f"feature encoding merges {len(collisions)} buffered pairs with different rewards, "
            f"e.g. outcome {collisions[0][0]} at {collisions[0][1]} and {collisions[0][2]}; expect bias",
            FeatureCollisionWarning, stacklevel=2,
        )
    return FeatureResult(enc, model, params, float(loss), collisions)
