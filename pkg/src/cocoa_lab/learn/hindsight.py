"""Hindsight action classifiers ``h(a | s, u')`` and derived coefficients."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..dp import CoefficientTable
from ..encodings import OutcomeEncoding
from ..funcapprox import AdamW, HindsightHyperNet, softmax
from ..mdp import TrajectoryBatch


def hindsight_pairs(batch: TrajectoryBatch, encoding: OutcomeEncoding, gamma: float = 1.0):
    """All ``(t, k >= 1)`` classification examples of a batch.

    Returns arrays ``(states, outcomes, actions, weights)`` where the weight
    of an example at lag ``k`` is ``gamma ** k``.
    """
    U = encoding.encode_batch(batch)
    S, A, mask = batch.states, batch.actions, batch.mask
    T = batch.max_length
    parts = []
    for k in range(1, T):
        m = mask[:, k:]
        parts.append((S[:, : T - k][m], U[:, k:][m], A[:, : T - k][m], np.full(int(m.sum()), gamma ** k)))
    if not parts:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, np.zeros(0)
    return tuple(np.concatenate(x) for x in zip(*parts))


def coefficients_from_hindsight(h: np.ndarray, probs: np.ndarray, seen: np.ndarray | None = None,
                                encoding: OutcomeEncoding | None = None) -> CoefficientTable:
    """``w = h / pi - 1``; the policy floor keeps the division finite."""
    pi = np.maximum(probs, np.finfo(float).tiny)[:, :, None]
    w = h / pi - 1.0
    reachable = np.ones(w.shape[::2], dtype=bool) if seen is None else seen
    return CoefficientTable(w, reachable, encoding)


class TabularHindsight:
    """Empirical hindsight table ``h(a | s, u')``.

    ``conditioning="counts"`` keeps ``n(s, u', a)`` and returns
    ``n(s, u', a) / n(s, u')``, exact for a fixed data-generating policy.

    ``conditioning="ratio"`` also accumulates the expected count
    ``D(s, u', a) = sum_i pi_i(a | s)`` over the same examples, where
    ``pi_i`` is the behaviour policy when example ``i`` was collected.
    ``n / D`` estimates ``h / pi = w + 1`` without being distorted by past
    policy changes, and recombining with the current policy,
    ``h = pi(a|s) n / D`` renormalized over actions, tracks policy updates
    the way a logit-conditioned model does. ``prior`` pseudo-examples,
    spread over actions by the current policy and added to both ``n`` and
    ``D``, shrink rarely observed ratios towards 1.

    Counts may be discounted by lag (``gamma``) and aged by ``decay``.
    """

    def __init__(self, num_states: int, num_actions: int, encoding: OutcomeEncoding,
                 gamma: float = 1.0, decay: float | None = None, conditioning: str = "counts",
                 prior: float = 0.0):
        if conditioning not in ("counts", "ratio"):
            raise ValueError("conditioning must be 'counts' or 'ratio'")
        if prior < 0:
            raise ValueError("prior must be non-negative")
        self.encoding = encoding
        self.gamma = gamma
        self.decay = decay
        self.conditioning = conditioning
        self.prior = float(prior)
        self.counts = np.zeros((num_states, encoding.num_outcomes, num_actions))
        self.expected = np.zeros_like(self.counts)

    @property
    def seen(self) -> np.ndarray:
        return self.counts.sum(axis=2) > 0

    def update(self, batch: TrajectoryBatch, policy=None) -> float:
        """Add the batch's examples; returns their cross-entropy under the prior table.

        ``policy`` (a policy object or an (S, A) table) is the behaviour
        policy of the batch and is required for ratio conditioning.
        """
        s, u, a, wt = hindsight_pairs(batch, self.encoding, self.gamma)
        loss = 0.0
        if s.size and self.conditioning == "counts":
            tot = self.counts[s, u].sum(axis=1)
            p = np.where(tot > 0, self.counts[s, u, a] / np.where(tot > 0, tot, 1.0), np.nan)
            known = np.isfinite(p) & (p > 0)
            loss = float(-np.sum(wt[known] * np.log(p[known])) / max(wt[known].sum(), 1e-300)) if known.any() else 0.0
        if self.decay is not None:
            self.counts *= self.decay
            self.expected *= self.decay
        np.add.at(self.counts, (s, u, a), wt)
        if self.conditioning == "ratio" and s.size:
            if policy is None:
                raise ValueError("ratio conditioning needs the behaviour policy")
            pb = policy[s] if isinstance(policy, np.ndarray) else policy.probs(s)
            for b in range(self.counts.shape[2]):
                np.add.at(self.expected[:, :, b], (s, u), wt * pb[:, b])
        return loss

    def _hindsight(self, probs: np.ndarray) -> np.ndarray:
        """``h[s, u, a]`` before the unseen fallback."""
        if self.conditioning == "counts":
            tot = self.counts.sum(axis=2, keepdims=True)
            return self.counts / np.where(tot > 0, tot, 1.0)
        pseudo = self.prior * probs[:, None, :]
        den = self.expected + pseudo
        ratio = np.where(den > 0, (self.counts + pseudo) / np.where(den > 0, den, 1.0), 1.0)
        num = ratio * probs[:, None, :]
        return num / num.sum(axis=2, keepdims=True)

    def probs(self, states, outcomes, policy_table: np.ndarray, logits=None) -> tuple[np.ndarray, np.ndarray]:
        """``(h, seen)`` for query pairs; unseen pairs fall back to ``policy_table`` rows."""
        states = np.asarray(states)
        outcomes = np.asarray(outcomes)
        h_all = self._hindsight(policy_table)[states, outcomes]
        seen = self.seen[states, outcomes]
        h = np.where(seen[..., None], h_all, policy_table[states])
        return h, seen

    def table(self, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Full ``h[s, a, u]`` with policy fallback for unseen ``(s, u)``."""
        seen = self.seen
        h = np.where(seen[:, :, None], self._hindsight(probs), probs[:, None, :])
        return np.transpose(h, (0, 2, 1)), seen

    def coefficients(self, probs: np.ndarray) -> CoefficientTable:
        h, seen = self.table(probs)
        return coefficients_from_hindsight(h, probs, seen, self.encoding)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["s", "u", "a", "count"])
            for s, u, a in zip(*np.nonzero(self.counts)):
                out.writerow([s, u, a, repr(float(self.counts[s, u, a]))])


class HypernetHindsight:
    """Neural hindsight classifier with multiplicative policy-logit input."""

    def __init__(self, state_features: np.ndarray, encoding: OutcomeEncoding, num_actions: int,
                 hidden=(64,), complement: bool = False, lr: float = 3e-3, gamma: float = 1.0,
                 steps_per_update: int = 1, rng: np.random.Generator | None = None):
        self.state_features = np.asarray(state_features, dtype=float)
        self.outcome_features = np.asarray(encoding.outcome_features, dtype=float)
        self.encoding = encoding
        self.gamma = gamma
        self.steps_per_update = steps_per_update
        self.net = HindsightHyperNet(self.state_features.shape[1], self.outcome_features.shape[1],
                                     num_actions, hidden, complement)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = self.net.init(rng)
        self.opt = AdamW(lr=lr)

    def _inputs(self, s, u, policy):
        return self.state_features[s], self.outcome_features[u], policy.logits(s)

    def update(self, batch: TrajectoryBatch, policy) -> float:
        s, u, a, wt = hindsight_pairs(batch, self.encoding, self.gamma)
        if s.size == 0:
            return 0.0
        xs, xu, lg = self._inputs(s, u, policy)
        loss = 0.0
        for _ in range(self.steps_per_update):
            loss, grad = self.net.loss_and_grad(self.params, xs, xu, lg, a, wt)
            self.params = self.opt.step(self.params, grad)
        return float(loss)

    def probs(self, states, outcomes, policy) -> np.ndarray:
        xs, xu, lg = self._inputs(np.asarray(states), np.asarray(outcomes), policy)
        return softmax(self.net.forward(self.params, xs, xu, lg)[0])

    def table(self, policy, num_states: int) -> np.ndarray:
        U = self.encoding.num_outcomes
        s = np.repeat(np.arange(num_states), U)
        u = np.tile(np.arange(U), num_states)
        h = self.probs(s, u, policy).reshape(num_states, U, -1)
        return np.transpose(h, (0, 2, 1))

    def coefficients(self, policy, num_states: int) -> CoefficientTable:
        probs = policy.probs(np.arange(num_states))
        return coefficients_from_hindsight(self.table(policy, num_states), probs, encoding=self.encoding)
