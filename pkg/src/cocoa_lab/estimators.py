"""Policy-gradient estimators computed from sampled trajectories.

Each estimator reduces to per-step action weights ``c[b, t, a]`` such that
the gradient of trajectory ``b`` is ``sum_t sum_a c[b, t, a] grad pi(a|S_t)``.
A log-prob term ``grad log pi(A_t|S_t) X`` contributes ``onehot(A_t) X / pi``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import rounded_returns
from .encodings import OutcomeEncoding
from .mdp import Trajectory, TrajectoryBatch

KINDS = (
    "reinforce", "advantage", "q-critic", "trajcv", "hca-plus", "hca-reward-model",
    "hca-return", "counterfactual-return", "cocoa", "cocoa-sampled", "cocoa-nstep",
)

REQUIRED = {
    "advantage": ("V",),
    "q-critic": ("Q",),
    "trajcv": ("Q",),
    "hca-plus": ("coefficients", "encoding"),
    "hca-reward-model": ("coefficients", "encoding", "reward_model"),
    "hca-return": ("return_hindsight",),
    "counterfactual-return": ("return_hindsight",),
    "cocoa": ("coefficients", "encoding"),
    "cocoa-sampled": ("coefficients", "encoding"),
    "cocoa-nstep": ("encoding", "n", "w_nb", "w_n", "V", "reward_model"),
}


class MissingModelError(ValueError):
    pass


def _table(x):
    return None if x is None else np.asarray(getattr(x, "w", x), dtype=float)


@dataclass
class EstimatorSpec:
    """Estimator kind plus the models it consumes.

    ``coefficients`` is an (S, A, U) table or anything with a ``.w``
    attribute. ``return_hindsight`` is a pair ``(table (S, A, K), lookup)``
    where ``lookup`` maps an array of returns to support indices.
    ``outer_discount`` applies the ``gamma^t`` factor of the discounted
    objective; without it REINFORCE is the time-discounting heuristic.
    """

    kind: str
    encoding: OutcomeEncoding | None = None
    gamma: float = 1.0
    coefficients: object = None
    V: np.ndarray | None = None
    Q: np.ndarray | None = None
    reward_model: np.ndarray | None = None
    return_hindsight: tuple | None = None
    n: int | None = None
    w_nb: object = None
    w_n: object = None
    num_samples: int = 1
    outer_discount: bool = True
    name: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        missing = [k for k in REQUIRED.get(self.kind, ()) if getattr(self, k) is None]
        if missing:
            raise MissingModelError(f"{self.kind} needs {', '.join(missing)}")
        if self.kind == "cocoa-sampled" and self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.kind in ("hca-return", "counterfactual-return") and self.gamma != 1.0:
            raise ValueError("return-conditioned estimators use undiscounted returns")

    @property
    def label(self) -> str:
        return self.name or self.kind


def discounted_returns(rewards: np.ndarray, mask: np.ndarray, gamma: float) -> np.ndarray:
    Z = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = np.where(mask[:, t], rewards[:, t] + gamma * acc, 0.0)
        Z[:, t] = acc
    return Z


def _future_sum(table: np.ndarray, S: np.ndarray, U: np.ndarray, R: np.ndarray, mask: np.ndarray,
                gamma: float, max_lag: int | None = None) -> np.ndarray:
    """``sum_{1<=k<=max_lag} gamma^k table[S_t, :, U_{t+k}] R_{t+k}`` for every ``t``."""
    B, T = S.shape
    A = table.shape[1]
    out = np.zeros((B, T, A))
    last = T - 1 if max_lag is None else min(max_lag, T - 1)
    for k in range(1, last + 1):
        rk = np.where(mask[:, k:], R[:, k:], 0.0) * gamma ** k
        out[:, : T - k] += table[S[:, : T - k], :, U[:, k:]] * rk[:, :, None]
    return out


def step_weights(spec: EstimatorSpec, batch: TrajectoryBatch, policy, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-step action weights ``c[b, t, a]`` (zero beyond each trajectory)."""
    S, Acts, R, mask = batch.states, batch.actions, batch.rewards, batch.mask
    B, T = S.shape
    nA = policy.num_actions
    g = spec.gamma
    pi = policy.probs(S.ravel()).reshape(B, T, nA)
    onehot = np.zeros((B, T, nA))
    np.put_along_axis(onehot, Acts[:, :, None], 1.0, axis=2)
    pi_taken = np.take_along_axis(pi, Acts[:, :, None], axis=2)[:, :, 0]
    if np.any(mask & (pi_taken <= 0)):
        raise ValueError("trajectory contains an action outside the policy support")
    score = onehot / np.where(pi_taken > 0, pi_taken, 1.0)[:, :, None]
    U = spec.encoding.encode_batch(batch) if spec.encoding is not None else None
    kind = spec.kind

    if kind == "reinforce":
        c = score * discounted_returns(R, mask, g)[:, :, None]
    elif kind == "advantage":
        V = np.asarray(spec.V, dtype=float)
        c = score * (discounted_returns(R, mask, g) - V[S])[:, :, None]
    elif kind == "q-critic":
        c = np.asarray(spec.Q, dtype=float)[S]
    elif kind == "trajcv":
        Qt = np.asarray(spec.Q, dtype=float)
        q_all = Qt[S]
        v = np.sum(pi * q_all, axis=2)
        q_taken = np.take_along_axis(q_all, Acts[:, :, None], axis=2)[:, :, 0]
        gap = np.where(mask, q_taken - v, 0.0)
        # sum_{t' > t} gamma^{t'-t} (Q - V)(S_t', A_t')
        later = discounted_returns(gap, mask, g) - gap
        z = discounted_returns(R, mask, g)
        c = score * (z - q_taken - later)[:, :, None] + q_all
    elif kind in ("cocoa", "hca-plus", "cocoa-sampled"):
        w = _table(spec.coefficients)
        inner = _future_sum(w, S, U, R, mask, g)
        if kind == "cocoa-sampled":
            rng = rng if rng is not None else np.random.default_rng(0)
            counts = _sample_action_counts(pi, spec.num_samples, rng)
            inner = inner * counts / (spec.num_samples * np.maximum(pi, np.finfo(float).tiny))
        c = score * R[:, :, None] + inner
    elif kind == "hca-reward-model":
        w = _table(spec.coefficients)
        r_hat = np.asarray(spec.reward_model, dtype=float)
        c = r_hat[S] + _future_sum(w + 1.0, S, U, R, mask, g)
    elif kind in ("hca-return", "counterfactual-return"):
        table, lookup = spec.return_hindsight
        table = np.asarray(table, dtype=float)
        Z = rounded_returns(batch)
        zi = lookup(Z)
        if np.any(mask & (zi < 0)):
            raise ValueError("observed return outside the hindsight model's support")
        zi = np.where(mask, zi, 0)
        h = table[S, :, zi]
        if kind == "hca-return":
            h_taken = np.take_along_axis(h, Acts[:, :, None], axis=2)[:, :, 0]
            bad = mask & (h_taken <= 0)
            if np.any(bad):
                raise FloatingPointError("hindsight probability of an observed action is zero")
            factor = 1.0 - pi_taken / np.where(h_taken > 0, h_taken, 1.0)
            c = score * (factor * Z)[:, :, None]
        else:
            c = (h / pi - 1.0) * Z[:, :, None]
    elif kind == "cocoa-nstep":
        c = nstep_advantages(spec, batch, policy)
    else:  # pragma: no cover - guarded by EstimatorSpec
        raise ValueError(kind)

    if spec.outer_discount and g != 1.0:
        c = c * (g ** np.arange(T))[None, :, None]
    c = np.where(mask[:, :, None], c, 0.0)
    if not np.all(np.isfinite(c)):
        raise FloatingPointError(f"{spec.label}: non-finite step weights")
    return c


def _sample_action_counts(pi: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """Counts of ``M`` independent policy samples per step, shape like ``pi``."""
    B, T, A = pi.shape
    cdf = np.cumsum(pi, axis=2)
    u = rng.random((B, T, M))
    idx = np.minimum((u[:, :, :, None] > cdf[:, :, None, :]).sum(axis=3), A - 1)
    counts = np.zeros((B, T, A))
    for a in range(A):
        counts[:, :, a] = (idx == a).sum(axis=2)
    return counts


def nstep_advantages(spec: EstimatorSpec, batch: TrajectoryBatch, policy) -> np.ndarray:
    """Sampled n-step advantages ``A_hat[b, t, a]`` (before any ``gamma^t`` factor)."""
    S, R, mask = batch.states, batch.rewards, batch.mask
    B, T = S.shape
    g, n = spec.gamma, int(spec.n)
    U = spec.encoding.encode_batch(batch)
    pi = policy.probs(S.ravel()).reshape(B, T, policy.num_actions)
    r_hat = np.asarray(spec.reward_model, dtype=float)[S]
    base = r_hat - np.sum(pi * r_hat, axis=2, keepdims=True)
    w_nb = _table(spec.w_nb)
    w_n = _table(spec.w_n)
    V = np.asarray(spec.V, dtype=float).copy()
    V[batch.absorbing_state] = 0.0
    mid = _future_sum(w_nb, S, U, R, mask, g, max_lag=n - 1)
    # bootstrap state S_{t+n}; absorbing once past the end
    pad = np.full((B, n), batch.absorbing_state, dtype=S.dtype)
    S_ext = np.concatenate([S, pad], axis=1)
    S_ext = np.where(np.arange(T + n)[None, :] < batch.lengths[:, None], S_ext, batch.absorbing_state)
    S_n = S_ext[:, n: n + T]
    boot = g ** n * w_n[S, :, S_n] * V[S_n][:, :, None]
    return np.where(mask[:, :, None], base + mid + boot, 0.0)


def estimate_batch(spec: EstimatorSpec, batch: TrajectoryBatch, policy,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-trajectory gradient estimates, shape (B, P)."""
    c = step_weights(spec, batch, policy, rng)
    mask = batch.mask
    rows = np.broadcast_to(np.arange(len(batch))[:, None], mask.shape)
    return policy.vjp_grouped(batch.states[mask], c[mask], rows[mask], len(batch))


def estimate(spec: EstimatorSpec, trajectory, policy, absorbing_state: int | None = None,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Gradient estimate from one trajectory (or the mean over a batch)."""
    if isinstance(trajectory, Trajectory):
        if absorbing_state is None:
            raise ValueError("absorbing_state is required for a single trajectory")
        trajectory = trajectory.to_batch(absorbing_state)
    return estimate_batch(spec, trajectory, policy, rng).mean(axis=0)


def estimate_sampled_actions(spec: EstimatorSpec, trajectory, policy, M: int, rng: np.random.Generator,
                             absorbing_state: int | None = None) -> np.ndarray:
    s = EstimatorSpec(**{**spec.__dict__, "kind": "cocoa-sampled", "num_samples": M})
    return estimate(s, trajectory, policy, absorbing_state, rng)


def estimate_nstep(spec: EstimatorSpec, batch: TrajectoryBatch, policy):
    """``(advantage samples (B, T, A), per-trajectory gradients (B, P))``."""
    adv = nstep_advantages(spec, batch, policy)
    return adv, estimate_batch(spec, batch, policy)
