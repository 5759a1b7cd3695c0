"""Return-conditioned hindsight models for the return-based estimators."""
from __future__ import annotations

import numpy as np

from ..dp import ReturnDistribution, rounded_returns
from ..mdp import TrajectoryBatch


class ReturnBins:
    """Exact support when small, otherwise uniform bins over a fixed range."""

    def __init__(self, values: np.ndarray, max_exact: int = 64, num_bins: int = 32):
        values = np.unique(np.round(np.asarray(values, dtype=float), 12))
        if values.size == 0:
            values = np.array([0.0])
        self.exact = values.size <= max_exact
        if self.exact:
            self.support = values
            self._index = {float(v): i for i, v in enumerate(values)}
        else:
            self.edges = np.linspace(values.min(), values.max(), num_bins + 1)
            self.support = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.size = self.support.size

    def __call__(self, returns: np.ndarray) -> np.ndarray:
        z = np.round(np.asarray(returns, dtype=float), 12)
        if self.exact:
            return np.vectorize(lambda v: self._index.get(float(v), -1), otypes=[np.int64])(z)
        idx = np.searchsorted(self.edges, z, side="right") - 1
        return np.clip(idx, 0, self.size - 1)


class TabularReturnHindsight:
    """Empirical ``h(a | s, z)`` from counts of ``(S_t, bin(Z_t), A_t)``."""

    def __init__(self, num_states: int, num_actions: int, bins: ReturnBins):
        self.bins = bins
        self.counts = np.zeros((num_states, bins.size, num_actions))

    def update(self, batch: TrajectoryBatch) -> None:
        Z = rounded_returns(batch)
        zi = self.bins(Z)
        m = batch.mask & (zi >= 0)
        np.add.at(self.counts, (batch.states[m], zi[m], batch.actions[m]), 1.0)

    def table(self, probs: np.ndarray) -> np.ndarray:
        """``h[s, a, k]``, falling back to the policy where ``(s, k)`` is unseen."""
        tot = self.counts.sum(axis=2, keepdims=True)
        h = np.where(tot > 0, self.counts / np.where(tot > 0, tot, 1.0), probs[:, None, :])
        return np.transpose(h, (0, 2, 1))

    def model(self, probs: np.ndarray) -> tuple:
        """``(table, lookup)`` pair accepted by the return-based estimators."""
        return self.table(probs), self.bins


def exact_return_model(dist: ReturnDistribution, probs: np.ndarray) -> tuple:
    return dist.hindsight(probs), dist.lookup
