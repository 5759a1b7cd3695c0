"""Small differentiable models with hand-written backward passes.

Everything here works on flat float64 parameter vectors so that optimizers,
checkpoints and finite-difference checks share one representation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


# ----------------------------------------------------------------------
# nonlinearities


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    return upstream * (x > 0)


def relu_g(x: np.ndarray) -> np.ndarray:
    """Gated rectifier: ``relu(x[:n/2]) - relu(x[n/2:])`` along the last axis."""
    n = x.shape[-1]
    if n % 2:
        raise ValueError(f"relu_g needs an even last dimension, got {n}")
    h = n // 2
    return relu(x[..., :h]) - relu(x[..., h:])


def relu_g_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    h = x.shape[-1] // 2
    return np.concatenate([upstream * (x[..., :h] > 0), -upstream * (x[..., h:] > 0)], axis=-1)


def straight_through_relu(x):
    return relu(x)


def straight_through_relu_backward(x, upstream):
    """Identity surrogate: the upstream gradient passes unchanged."""
    return upstream


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal truncated at two standard deviations (rejection resampling)."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


# ----------------------------------------------------------------------
# multilayer perceptron


class Mlp:
    """Fully connected network with rectifier hidden layers and linear output.

    Parameters are laid out layer by layer as ``W`` (in, out) row-major
    followed by ``b`` (out,).
    """

    def __init__(self, sizes: Sequence[int]):
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        self._slices = []
        offset = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            self._slices.append((w, b, n_in, n_out))
        self.num_params = offset

    def init(self, rng: np.random.Generator) -> np.ndarray:
        params = np.zeros(self.num_params)
        for w, _, n_in, n_out in self._slices:
            params[w] = truncated_normal(rng, n_in * n_out, 1.0 / np.sqrt(n_in))
        return params

    def layers(self, params: np.ndarray):
        return [(params[w].reshape(n_in, n_out), params[b]) for w, b, n_in, n_out in self._slices]

    def forward(self, params: np.ndarray, x: np.ndarray):
        """Return ``(output, cache)`` for a batch ``x`` of shape (n, in)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input dim {self.sizes[0]}, got {x.shape[1]}")
        if params.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {params.shape}")
        acts, pres = [x], []
        h = x
        layers = self.layers(params)
        for i, (W, b) in enumerate(layers):
            z = h @ W + b
            pres.append(z)
            h = relu(z) if i < len(layers) - 1 else z
            acts.append(h)
        return h, (acts, pres)

    def __call__(self, params, x):
        return self.forward(params, x)[0]

    def backward(self, params: np.ndarray, cache, upstream: np.ndarray):
        """Return ``(dparams, dinput)`` given ``d loss / d output``."""
        acts, pres = cache
        grad = np.zeros(self.num_params)
        layers = self.layers(params)
        g = np.atleast_2d(upstream)
        for i in range(len(layers) - 1, -1, -1):
            w, b, n_in, n_out = self._slices[i]
            if i < len(layers) - 1:
                g = relu_backward(pres[i], g)
            grad[w] = (acts[i].T @ g).ravel()
            grad[b] = g.sum(axis=0)
            g = g @ layers[i][0].T
        return grad, g


def mlp_forward(mlp: Mlp, params, x):
    return mlp.forward(params, x)


def mlp_backward(mlp: Mlp, params, cache, upstream):
    return mlp.backward(params, cache, upstream)


# ----------------------------------------------------------------------
# hindsight hypernetwork


class HindsightHyperNet:
    """Classifier over past actions given ``(state, outcome, policy logits)``.

    A trunk MLP maps ``concat(state, outcome)`` to ``2 * (A + A*K)`` units,
    a gated rectifier halves that to ``A`` base logits plus an ``A x K``
    matrix, and the output is ``base + matrix @ streams``. The streams are
    the policy logits (``K = A``) or, with ``complement=True``, the logits
    followed by ``1 - logits`` (``K = 2A``). Logits enter as constants.
    """

    def __init__(self, state_dim: int, outcome_dim: int, num_actions: int,
                 hidden: Sequence[int] = (64,), complement: bool = False):
        self.num_actions = num_actions
        self.complement = complement
        self.k = 2 * num_actions if complement else num_actions
        self.head_dim = num_actions + num_actions * self.k
        self.trunk = Mlp([state_dim + outcome_dim, *hidden, 2 * self.head_dim])
        self.num_params = self.trunk.num_params

    def init(self, rng):
        return self.trunk.init(rng)

    def _streams(self, logits):
        logits = np.atleast_2d(logits)
        return np.concatenate([logits, 1.0 - logits], axis=1) if self.complement else logits

    def forward(self, params, states, outcomes, logits):
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(outcomes)], axis=1)
        pre, cache = self.trunk.forward(params, x)
        head = relu_g(pre)
        A = self.num_actions
        base = head[:, :A]
        mat = head[:, A:].reshape(-1, A, self.k)
        streams = self._streams(logits)
        out = base + np.einsum("nak,nk->na", mat, streams)
        return out, (cache, pre, streams)

    def backward(self, params, cache, upstream):
        trunk_cache, pre, streams = cache
        upstream = np.atleast_2d(upstream)
        d_mat = upstream[:, :, None] * streams[:, None, :]
        d_head = np.concatenate([upstream, d_mat.reshape(upstream.shape[0], -1)], axis=1)
        d_pre = relu_g_backward(pre, d_head)
        grad, _ = self.trunk.backward(params, trunk_cache, d_pre)
        return grad

    def probs(self, params, states, outcomes, logits):
        return softmax(self.forward(params, states, outcomes, logits)[0])

    def loss_and_grad(self, params, states, outcomes, logits, labels, weights=None):
        """Weighted mean cross-entropy of ``labels`` and its gradient."""
        out, cache = self.forward(params, states, outcomes, logits)
        n = out.shape[0]
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        wsum = w.sum()
        logp = log_softmax(out)
        loss = -np.sum(w * logp[np.arange(n), labels]) / wsum
        d_out = softmax(out)
        d_out[np.arange(n), labels] -= 1.0
        d_out *= (w / wsum)[:, None]
        return loss, self.backward(params, cache, d_out)


# ----------------------------------------------------------------------
# masked linear reward model


class MaskedRewardModel:
    """Reward regressor ``r(x, a) = sum_i v_i * relu(m[a, i]**2 * x_i)``.

    The rectifier uses a straight-through backward pass. Parameters are the
    mask matrix ``m`` (A, d) followed by the readout ``v`` (d,).
    """

    feature_threshold = 0.05

    def __init__(self, input_dim: int, num_actions: int):
        self.input_dim = input_dim
        self.num_actions = num_actions
        self.num_params = num_actions * input_dim + input_dim

    def init(self, rng):
        d = self.input_dim
        mask = np.ones(self.num_actions * d)
        readout = rng.normal(0.0, 1.0 / np.sqrt(d), size=d)
        return np.concatenate([mask, readout])

    def split(self, params):
        n = self.num_actions * self.input_dim
        return params[:n].reshape(self.num_actions, self.input_dim), params[n:]

    def activations(self, params, x, actions):
        mask, _ = self.split(params)
        return straight_through_relu(mask[actions] ** 2 * np.atleast_2d(x))

    def predict(self, params, x, actions):
        _, v = self.split(params)
        return self.activations(params, x, actions) @ v

    def features(self, params, x, actions) -> np.ndarray:
        """Binary feature codes ``1[activation > 0.05]``."""
        return self.activations(params, x, actions) > self.feature_threshold

    def loss_and_grad(self, params, x, actions, rewards, weights=None):
        """(Weighted) mean squared error and its straight-through gradient."""
        mask, v = self.split(params)
        x = np.atleast_2d(x)
        n = x.shape[0]
        wt = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
        m = mask[actions]
        pre = m ** 2 * x
        act = straight_through_relu(pre)
        err = act @ v - rewards
        loss = float(wt @ err ** 2)
        d_pred = 2.0 * wt * err
        d_v = act.T @ d_pred
        d_pre = straight_through_relu_backward(pre, d_pred[:, None] * v[None, :])
        d_m = d_pre * 2.0 * m * x
        onehot = np.zeros((n, self.num_actions))
        onehot[np.arange(n), actions] = 1.0
        d_mask = onehot.T @ d_m
        return loss, np.concatenate([d_mask.ravel(), d_v])

    def penalty_and_grad(self, params, l1: float, l2: float):
        """``l1 * sum|m| + l2 * sum v**2`` and its (sub)gradient."""
        mask, v = self.split(params)
        pen = l1 * float(np.abs(mask).sum()) + l2 * float(v @ v)
        return pen, np.concatenate([l1 * np.sign(mask).ravel(), 2.0 * l2 * v])


# ----------------------------------------------------------------------
# optimizer


@dataclass
class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    ``weight_decay`` (L2, shrink by ``lr * wd * p``) and ``l1_decay`` (shrink
    by ``lr * l1 * sign(p)``) may be scalars or per-parameter arrays and are
    applied after the moment step.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float | np.ndarray = 0.0
    l1_decay: float | np.ndarray = 0.0
    clip_norm: float | None = None
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        grads = np.asarray(grads, dtype=float)
        if not np.all(np.isfinite(grads)):
            bad = np.flatnonzero(~np.isfinite(grads))
            raise NonFiniteGradientError(
                f"non-finite gradient at {bad.size} coordinates (first: {bad[:5].tolist()})"
            )
        if self.clip_norm is not None:
            norm = float(np.linalg.norm(grads))
            if norm > self.clip_norm:
                grads = grads * (self.clip_norm / norm)
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        new = params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        new = new - self.lr * self.weight_decay * new
        new = new - self.lr * self.l1_decay * np.sign(new)
        return new


def optimizer_step(opt: AdamW, params, grads):
    return opt.step(params, grads)


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``<path>.npz`` with flat arrays and ``<path>.json`` with shapes and metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = {k: np.asarray(v).ravel() for k, v in arrays.items()}
    np.savez(path.with_suffix(".npz"), **flat)
    manifest = {
        "arrays": {k: {"shape": list(np.shape(v)), "dtype": str(np.asarray(v).dtype)} for k, v in arrays.items()},
        "meta": meta or {},
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path):
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    with np.load(path.with_suffix(".npz")) as data:
        arrays = {k: data[k].reshape(spec["shape"]) for k, spec in manifest["arrays"].items()}
    return arrays, manifest["meta"]


# ----------------------------------------------------------------------
# gradient checking


def finite_difference_check(f, params, grad, coords, step: float = 1e-5, floor: float = 1e-6):
    """Max relative error between ``grad[coords]`` and central differences of ``f``.

    The relative error of a coordinate is ``|g - fd| / max(|g| + |fd|, floor)``;
    the floor keeps round-off on near-zero coordinates from dominating.
    """
    errs = []
    for i in coords:
        p_plus = params.copy()
        p_minus = params.copy()
        p_plus[i] += step
        p_minus[i] -= step
        fd = (f(p_plus) - f(p_minus)) / (2 * step)
        errs.append(abs(grad[i] - fd) / max(abs(grad[i]) + abs(fd), floor))
    return float(max(errs)) if errs else 0.0
