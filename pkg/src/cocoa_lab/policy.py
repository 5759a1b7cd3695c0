"""Softmax policies with epsilon-uniform mixing and analytic gradients.

Estimators never materialize per-action Jacobians. They supply a weight
vector ``c`` over actions for each visited state and ask the policy for
``sum_i J(s_i)^T c_i`` where ``J(s)[a] = d pi(a|s) / d theta``. Log-prob
gradients are the special case ``c = onehot(a) / pi(a|s)``.
"""
from __future__ import annotations

import numpy as np

from .funcapprox import Mlp, softmax

PROB_ATOL = 1e-12


class SoftmaxPolicy:
    """Base class: ``pi = (1 - eps) * softmax(logits) + eps / A``."""

    num_actions: int
    params: np.ndarray

    def __init__(self, num_actions: int, epsilon: float = 0.0, entropy_coefficient: float = 0.0):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.num_actions = num_actions
        self.epsilon = float(epsilon)
        self.entropy_coefficient = float(entropy_coefficient)

    # subclasses implement these two
    def logits(self, states) -> np.ndarray:
        raise NotImplementedError

    def _logit_vjp(self, states, dlogits, groups=None, n_groups=None) -> np.ndarray:
        raise NotImplementedError

    @property
    def num_params(self) -> int:
        return self.params.shape[0]

    def copy(self, epsilon: float | None = None) -> "SoftmaxPolicy":
        raise NotImplementedError

    def with_params(self, params) -> "SoftmaxPolicy":
        other = self.copy()
        other.params = np.array(params, dtype=float)
        return other

    # ------------------------------------------------------------------

    def probs(self, states) -> np.ndarray:
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        sm = softmax(self.logits(states))
        if self.epsilon == 0.0:
            return sm
        return (1.0 - self.epsilon) * sm + self.epsilon / self.num_actions

    def policy_probs(self, state: int) -> np.ndarray:
        return self.probs([state])[0]

    def prob_table(self, mdp) -> np.ndarray:
        return self.probs(np.arange(mdp.num_states))

    def _dlogits(self, states, weights):
        sm = softmax(self.logits(states))
        inner = np.sum(sm * weights, axis=1, keepdims=True)
        return (1.0 - self.epsilon) * sm * (weights - inner)

    def vjp(self, states, weights) -> np.ndarray:
        """``sum_i sum_a weights[i, a] * grad pi(a | states[i])``."""
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        if states.size == 0:
            return np.zeros(self.num_params)
        return self._logit_vjp(states, self._dlogits(states, weights))

    def vjp_grouped(self, states, weights, groups, n_groups: int) -> np.ndarray:
        """Like :meth:`vjp` but summed separately per group id; shape (n_groups, P)."""
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        groups = np.asarray(groups, dtype=np.int64)
        if states.size == 0:
            return np.zeros((n_groups, self.num_params))
        return self._logit_vjp(states, self._dlogits(states, weights), groups, n_groups)

    def policy_grad(self, state: int, action: int) -> np.ndarray:
        """``grad_theta pi(action | state)``."""
        c = np.zeros((1, self.num_actions))
        c[0, action] = 1.0
        return self.vjp([state], c)

    def log_policy_grad(self, state: int, action: int) -> np.ndarray:
        """``grad_theta log pi(action | state)``; raises for zero-probability actions."""
        p = self.policy_probs(state)[action]
        if p <= 0.0:
            raise ValueError(f"log-gradient undefined: pi({action}|{state}) = 0")
        return self.policy_grad(state, action) / p

    def jacobian(self, state: int) -> np.ndarray:
        """Rows are ``grad pi(a|state)`` for every action, shape (A, P)."""
        return np.stack([self.policy_grad(state, a) for a in range(self.num_actions)])

    def entropy_grad(self, states, weights=None) -> np.ndarray:
        """Gradient of ``sum_i weights_i * H(pi(.|s_i))``."""
        states = np.atleast_1d(np.asarray(states, dtype=np.int64))
        p = self.probs(states)
        c = -(np.log(p) + 1.0)
        if weights is not None:
            c = c * np.asarray(weights, dtype=float)[:, None]
        return self.vjp(states, c)

    def check_normalized(self, states) -> None:
        p = self.probs(states)
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > PROB_ATOL):
            raise FloatingPointError("policy probabilities are not normalized")


class TabularSoftmaxPolicy(SoftmaxPolicy):
    """One logit per state-action pair; logits are ``params.reshape(S, A)``."""

    def __init__(self, num_states: int, num_actions: int, epsilon: float = 0.0,
                 entropy_coefficient: float = 0.0, params=None):
        super().__init__(num_actions, epsilon, entropy_coefficient)
        self.num_states = num_states
        if params is None:
            params = np.zeros(num_states * num_actions)
        self.params = np.array(params, dtype=float).ravel()
        if self.params.shape[0] != num_states * num_actions:
            raise ValueError("parameter vector has the wrong size")

    @classmethod
    def for_mdp(cls, mdp, **kwargs) -> "TabularSoftmaxPolicy":
        return cls(mdp.num_states, mdp.num_actions, **kwargs)

    @classmethod
    def from_probs(cls, probs, epsilon: float = 0.0) -> "TabularSoftmaxPolicy":
        """Policy whose softmax part equals ``probs``; zero entries get ``-inf`` logits."""
        probs = np.asarray(probs, dtype=float)
        S, A = probs.shape
        with np.errstate(divide="ignore"):
            logits = np.log(probs)
        return cls(S, A, epsilon=epsilon, params=logits.ravel())

    def copy(self, epsilon=None):
        return TabularSoftmaxPolicy(
            self.num_states, self.num_actions,
            epsilon=self.epsilon if epsilon is None else epsilon,
            entropy_coefficient=self.entropy_coefficient, params=self.params.copy(),
        )

    def logits(self, states):
        return self.params.reshape(self.num_states, self.num_actions)[states]

    def _logit_vjp(self, states, dlogits, groups=None, n_groups=None):
        A = self.num_actions
        cols = states[:, None] * A + np.arange(A)[None, :]
        if groups is None:
            out = np.zeros(self.num_params)
            np.add.at(out, cols.ravel(), dlogits.ravel())
            return out
        out = np.zeros((n_groups, self.num_params))
        rows = np.broadcast_to(groups[:, None], cols.shape)
        np.add.at(out, (rows.ravel(), cols.ravel()), dlogits.ravel())
        return out


class MlpSoftmaxPolicy(SoftmaxPolicy):
    """Logits from an MLP over per-state feature vectors."""

    def __init__(self, state_features, num_actions: int, hidden=(64, 64), epsilon: float = 0.0,
                 entropy_coefficient: float = 0.0, params=None, rng=None):
        super().__init__(num_actions, epsilon, entropy_coefficient)
        self.state_features = np.asarray(state_features, dtype=float)
        self.hidden = tuple(hidden)
        self.net = Mlp([self.state_features.shape[1], *self.hidden, num_actions])
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = self.net.init(rng)
        self.params = np.array(params, dtype=float)

    def copy(self, epsilon=None):
        return MlpSoftmaxPolicy(
            self.state_features, self.num_actions, self.hidden,
            epsilon=self.epsilon if epsilon is None else epsilon,
            entropy_coefficient=self.entropy_coefficient, params=self.params.copy(),
        )

    def logits(self, states):
        return self.net(self.params, self.state_features[states])

    def _logit_vjp(self, states, dlogits, groups=None, n_groups=None):
        x = self.state_features[states]
        if groups is None:
            _, cache = self.net.forward(self.params, x)
            return self.net.backward(self.params, cache, dlogits)[0]
        out = np.zeros((n_groups, self.num_params))
        for g in np.unique(groups):
            sel = groups == g
            _, cache = self.net.forward(self.params, x[sel])
            out[g] = self.net.backward(self.params, cache, dlogits[sel])[0]
        return out
