"""Temporal-difference learning of the successor tensor ``M[s, a, s']``."""
from __future__ import annotations

import numpy as np

from ..dp import CoefficientTable, Oracle, coefficients_from_occurrences
from ..mdp import TrajectoryBatch


class SuccessorLearner:
    """Tabular ``M_hat`` with expected-SARSA style targets under a fixed policy.

    Target for a transition ``(s, a, s2)``:
    ``onehot(s2) + gamma * sum_a2 pi(a2|s2) M_hat[s2, a2]`` with the
    absorbing state's row and column held at zero.
    """

    def __init__(self, num_states: int, num_actions: int, absorbing_state: int, lr: float = 0.5,
                 gamma: float = 1.0):
        self.M = np.zeros((num_states, num_actions, num_states))
        self.absorbing_state = absorbing_state
        self.lr = lr
        self.gamma = gamma

    def target(self, s2: np.ndarray, probs: np.ndarray) -> np.ndarray:
        n = s2.shape[0]
        tgt = np.zeros((n, self.M.shape[2]))
        tgt[np.arange(n), s2] = 1.0
        tgt += self.gamma * np.einsum("na,nat->nt", probs[s2], self.M[s2])
        tgt[s2 == self.absorbing_state] = 0.0
        tgt[:, self.absorbing_state] = 0.0
        return tgt

    def update(self, s, a, s2, probs: np.ndarray) -> float:
        """One sequential TD step per transition; returns mean squared TD error."""
        s, a, s2 = (np.atleast_1d(np.asarray(x, dtype=np.int64)) for x in (s, a, s2))
        err2 = 0.0
        for i in range(s.size):
            tgt = self.target(s2[i:i + 1], probs)[0]
            delta = tgt - self.M[s[i], a[i]]
            self.M[s[i], a[i]] += self.lr * delta
            err2 += float(delta @ delta)
        np.maximum(self.M, 0.0, out=self.M)
        return err2 / max(s.size, 1)

    def update_batch(self, batch: TrajectoryBatch, probs: np.ndarray) -> float:
        m = batch.mask
        return self.update(batch.states[m], batch.actions[m], batch.next_states()[m], probs)


def sr_update(learner: SuccessorLearner, transition, probs):
    s, a, s2 = transition
    return learner.update(s, a, s2, probs)


def outcome_emission(mdp, probs, encoding) -> np.ndarray:
    """``p(U = u | s)`` under the policy, the recombination table."""
    return Oracle(mdp, probs).emission(encoding)[0]


def sr_coefficients(learner: SuccessorLearner, emission: np.ndarray, probs: np.ndarray,
                    encoding=None) -> CoefficientTable:
    """Recombine ``M_hat`` with ``p(u | s')`` into outcome coefficients."""
    occ = learner.M @ emission
    return coefficients_from_occurrences(occ, probs, encoding)
