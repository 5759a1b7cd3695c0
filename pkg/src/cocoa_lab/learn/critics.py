"""TD(lambda) value and action-value critics."""
from __future__ import annotations

import numpy as np

from ..funcapprox import AdamW, Mlp
from ..mdp import TrajectoryBatch


def lambda_returns(rewards: np.ndarray, boot: np.ndarray, mask: np.ndarray, lam: float, gamma: float) -> np.ndarray:
    """Forward-view ``G_t = R_t + gamma * ((1 - lam) * boot_{t+1} + lam * G_{t+1})``.

    ``boot[:, t]`` is the critic's estimate at step ``t``; steps past the end
    count as absorbing with value zero.
    """
    B, T = rewards.shape
    G = np.zeros((B, T))
    nxt_G = np.zeros(B)
    nxt_boot = np.zeros(B)
    for t in range(T - 1, -1, -1):
        g = rewards[:, t] + gamma * ((1.0 - lam) * nxt_boot + lam * nxt_G)
        G[:, t] = np.where(mask[:, t], g, 0.0)
        nxt_G = G[:, t]
        nxt_boot = np.where(mask[:, t], boot[:, t], 0.0)
    return G


class TdCritic:
    """Tabular or MLP estimate of ``V(s)`` (``kind="V"``) or ``Q(s, a)``.

    Tabular step sizes are either a constant ``lr`` or, with
    ``lr="visits"``, ``1 / n`` per entry, which makes ``lam = 1`` an exact
    running Monte-Carlo mean.
    """

    def __init__(self, num_states: int, num_actions: int, kind: str = "V", lam: float = 0.9,
                 lr="visits", gamma: float = 1.0, backend: str = "tabular", state_features=None,
                 hidden=(256,), absorbing_state: int | None = None, rng=None):
        if kind not in ("V", "Q"):
            raise ValueError("kind must be 'V' or 'Q'")
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        self.kind, self.lam, self.lr, self.gamma, self.backend = kind, lam, lr, gamma, backend
        self.num_states, self.num_actions = num_states, num_actions
        self.absorbing_state = absorbing_state
        out_shape = (num_states,) if kind == "V" else (num_states, num_actions)
        if backend == "tabular":
            self.values = np.zeros(out_shape)
            self.visits = np.zeros(out_shape)
        elif backend == "mlp":
            self.features = np.asarray(state_features, dtype=float)
            self.net = Mlp([self.features.shape[1], *hidden, 1 if kind == "V" else num_actions])
            rng = rng if rng is not None else np.random.default_rng(0)
            self.params = self.net.init(rng)
            self.opt = AdamW(lr=1e-3 if lr == "visits" else float(lr))
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def table(self) -> np.ndarray:
        if self.backend == "tabular":
            out = self.values.copy()
        else:
            out = self.net(self.params, self.features)
            out = out[:, 0] if self.kind == "V" else out
        if self.absorbing_state is not None:
            out[self.absorbing_state] = 0.0
        return out

    def _estimates(self, batch):
        tab = self.table()
        if self.kind == "V":
            return tab[batch.states]
        return tab[batch.states, batch.actions]

    def update(self, batch: TrajectoryBatch) -> float:
        """One forward-view update on the batch; returns the mean squared error to the targets."""
        mask = batch.mask
        est = self._estimates(batch)
        G = lambda_returns(batch.rewards, est, mask, self.lam, self.gamma)
        s = batch.states[mask]
        a = batch.actions[mask]
        tgt = G[mask]
        err = tgt - est[mask]
        if self.backend == "tabular":
            idx = (s,) if self.kind == "V" else (s, a)
            n_b = np.zeros_like(self.visits)
            np.add.at(n_b, idx, 1.0)
            delta = np.zeros_like(self.values)
            np.add.at(delta, idx, err)
            touched = n_b > 0
            if self.lr == "visits":
                step = np.where(touched, 1.0 / np.where(touched, self.visits + n_b, 1.0), 0.0)
            else:
                step = np.where(touched, float(self.lr) / np.where(touched, n_b, 1.0), 0.0)
            self.values += step * delta
            self.visits += n_b
        else:
            x = self.features[s]
            out, cache = self.net.forward(self.params, x)
            pred = out[:, 0] if self.kind == "V" else out[np.arange(s.size), a]
            d = np.zeros_like(out)
            diff = 2.0 * (pred - tgt) / max(s.size, 1)
            if self.kind == "V":
                d[:, 0] = diff
            else:
                d[np.arange(s.size), a] = diff
            grad, _ = self.net.backward(self.params, cache, d)
            self.params = self.opt.step(self.params, grad)
        return float(np.mean(err ** 2)) if err.size else 0.0


def td_lambda_update(critic: TdCritic, batch: TrajectoryBatch) -> float:
    return critic.update(batch)
