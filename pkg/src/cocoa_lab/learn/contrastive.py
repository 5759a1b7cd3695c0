"""Contrastive density-ratio estimate of contribution coefficients.

A discriminator ``D(a, s, u') = sigmoid(x)`` separates observed actions from
policy-drawn counterfactual ones. At the optimum ``D / (1 - D) = e^x``
equals ``h(a | s, u') / pi(a | s)``.
"""
from __future__ import annotations

import numpy as np

from ..dp import CoefficientTable
from ..encodings import OutcomeEncoding
from ..funcapprox import AdamW
from ..mdp import TrajectoryBatch
from .hindsight import hindsight_pairs


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


class TabularContrastive:
    """Scores ``x[s, a, u]`` fitted on accumulated sufficient statistics.

    The loss of one example ``(s, a_obs, u')`` is
    ``-log D(a_obs) - sum_a pi(a|s) log(1 - D(a))``; summed over examples it
    depends on the data only through positive counts ``n[s, a, u]`` and
    policy-weighted negative mass ``m[s, a, u]``.
    """

    def __init__(self, num_states: int, num_actions: int, encoding: OutcomeEncoding, lr: float = 0.05,
                 gamma: float = 1.0):
        self.encoding = encoding
        self.gamma = gamma
        shape = (num_states, num_actions, encoding.num_outcomes)
        self.scores = np.zeros(shape)
        self.pos = np.zeros(shape)
        self.neg = np.zeros(shape)
        self.opt = AdamW(lr=lr)

    def accumulate(self, batch: TrajectoryBatch, policy) -> None:
        s, u, a, wt = hindsight_pairs(batch, self.encoding, self.gamma)
        np.add.at(self.pos, (s, a, u), wt)
        pi = policy.probs(s) if s.size else np.zeros((0, self.pos.shape[1]))
        for b in range(self.pos.shape[1]):
            np.add.at(self.neg, (s, np.full_like(s, b), u), wt * pi[:, b])

    def loss_and_grad(self):
        total = max(self.pos.sum(), 1e-300)
        x = self.scores
        loss = -(self.pos * log_sigmoid(x) + self.neg * log_sigmoid(-x)).sum() / total
        sig = 1.0 / (1.0 + np.exp(-x))
        grad = (-self.pos * (1.0 - sig) + self.neg * sig) / total
        return float(loss), grad

    def fit(self, steps: int = 2000) -> float:
        loss = 0.0
        for _ in range(steps):
            loss, grad = self.loss_and_grad()
            # Adam normalizes per entry, so rare (s, a, u) still converge
            self.scores = self.opt.step(self.scores.ravel(), grad.ravel()).reshape(self.scores.shape)
        return loss

    def update(self, batch: TrajectoryBatch, policy, steps: int = 1) -> float:
        self.accumulate(batch, policy)
        return self.fit(steps)

    def ratio(self, s, a, u) -> np.ndarray:
        """``w + 1 = e^x``, via ``sigmoid(x) / (1 - sigmoid(x)) = e^x``."""
        return np.exp(self.scores[s, a, u])

    def coefficients(self) -> CoefficientTable:
        seen = self.neg.sum(axis=1) > 0
        w = np.where(seen[:, None, :], np.exp(self.scores) - 1.0, 0.0)
        return CoefficientTable(w, seen, self.encoding)


def contrastive_ratio(model: TabularContrastive, s, a, u):
    return model.ratio(s, a, u)
