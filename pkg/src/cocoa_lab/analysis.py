"""Signal-to-noise, bias and variance of gradient estimators against DP truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dp import Oracle, expected_advantage
from .estimators import EstimatorSpec, estimate_batch, step_weights
from .mdp import TrajectoryBatch, child_rng, sample_batch

DEFAULT_SAMPLES = 512
PERTURBATION_SIGMAS = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3)


class UndefinedMetricsError(ValueError):
    pass


def to_db(x: float) -> float:
    if x == 0:
        return -math.inf
    if math.isinf(x):
        return math.inf
    return 10.0 * math.log10(x)


@dataclass
class MetricsRecord:
    estimator: str
    snr: float
    bias: float
    variance: float
    samples: int
    component: str = "full"
    mse: float = 0.0
    residual: float = 0.0
    residual_se: float = 0.0
    expected_from: str = "dp"

    @property
    def snr_db(self) -> float:
        return to_db(self.snr)

    @property
    def bias_db(self) -> float:
        return to_db(self.bias)

    @property
    def var_db(self) -> float:
        return to_db(self.variance)

    def decomposition_ok(self, n_se: float = 3.0) -> bool:
        """MSE equals bias plus variance up to ``n_se`` standard errors."""
        return abs(self.residual) <= n_se * self.residual_se + 1e-12 * max(self.mse, 1e-300)

    def as_row(self) -> dict:
        row = asdict(self)
        row.update(snr_db=self.snr_db, bias_db=self.bias_db, var_db=self.var_db)
        return row


def restrict_to_first_step(batch: TrajectoryBatch) -> np.ndarray:
    mask = np.zeros_like(batch.mask)
    mask[:, 0] = batch.mask[:, 0]
    return mask


def gradient_samples(spec: EstimatorSpec, batch: TrajectoryBatch, policy, first_step_only: bool = False,
                     rng: np.random.Generator | None = None, chunk: int = 4096) -> np.ndarray:
    """Per-trajectory estimates, optionally keeping only the ``t = 0`` term."""
    out = []
    for start in range(0, len(batch), chunk):
        sub = batch.subset(np.arange(start, min(start + chunk, len(batch))))
        if not first_step_only:
            out.append(estimate_batch(spec, sub, policy, rng))
            continue
        c = step_weights(spec, sub, policy, rng)[:, 0]
        out.append(policy.vjp_grouped(sub.states[:, 0], c, np.arange(len(sub)), len(sub)))
    return np.concatenate(out)


def expected_gradient(spec: EstimatorSpec, oracle: Oracle, policy, first_step_only: bool = False) -> np.ndarray:
    """DP expectation of ``spec`` under the oracle's policy."""
    models = {}
    if spec.coefficients is not None:
        models["coefficients"] = getattr(spec.coefficients, "w", spec.coefficients)
    if spec.V is not None:
        models["V"] = spec.V
    if spec.Q is not None:
        models["Q"] = spec.Q
    if spec.reward_model is not None:
        models["reward_model"] = spec.reward_model
    if spec.return_hindsight is not None:
        models["return_hindsight"] = spec.return_hindsight[0]
    if spec.kind == "cocoa-nstep":
        models.update(n=spec.n, w_nb=getattr(spec.w_nb, "w", spec.w_nb), w_n=getattr(spec.w_n, "w", spec.w_n))
    kind = spec.kind
    if kind == "trajcv":
        adv = oracle.Q
    elif kind == "hca-plus":
        adv = expected_advantage("cocoa", oracle, spec.encoding, models)
    else:
        adv = expected_advantage(kind, oracle, spec.encoding, models)
    if not first_step_only:
        return oracle.expected_gradient(adv, policy)
    s0 = oracle.mdp.start_state
    return policy.vjp([s0], adv[s0][None, :])


def true_gradient(oracle: Oracle, policy, first_step_only: bool = False) -> np.ndarray:
    if not first_step_only:
        return oracle.true_gradient(policy)
    s0 = oracle.mdp.start_state
    return policy.vjp([s0], oracle.Q[s0][None, :])


def metrics_from_samples(name: str, samples: np.ndarray, truth: np.ndarray, expected: np.ndarray,
                         component: str = "full", expected_from: str = "dp") -> MetricsRecord:
    norm2 = float(truth @ truth)
    if norm2 == 0.0:
        raise UndefinedMetricsError("ground-truth gradient is zero; normalized metrics are undefined")
    err = samples - truth
    dev = samples - expected
    sq_err = np.einsum("ij,ij->i", err, err)
    sq_dev = np.einsum("ij,ij->i", dev, dev)
    bias_vec = expected - truth
    bias2 = float(bias_vec @ bias_vec)
    mse = float(sq_err.mean())
    var = float(sq_dev.mean())
    resid = sq_err - bias2 - sq_dev
    n = samples.shape[0]
    se = float(resid.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    snr = math.inf if mse == 0.0 else norm2 / mse
    return MetricsRecord(name, snr, bias2 / norm2, var / norm2, n, component, mse,
                         float(resid.mean()), se, expected_from)


def evaluate_estimator(spec: EstimatorSpec, mdp, policy, sample_count: int = DEFAULT_SAMPLES,
                       rng_seed: int = 0, oracle: Oracle | None = None, batch: TrajectoryBatch | None = None,
                       first_step_only: bool = False, stream: int = 0) -> MetricsRecord:
    """Bias, variance and SNR of ``spec`` with DP ground truth.

    A shared ``batch`` may be passed so that several estimators are judged
    on identical trajectories.
    """
    oracle = oracle if oracle is not None else Oracle(mdp, policy, spec.gamma)
    if batch is None:
        batch = sample_batch(mdp, policy.prob_table(mdp), sample_count, child_rng(rng_seed, stream))
    truth = true_gradient(oracle, policy, first_step_only)
    samples = gradient_samples(spec, batch, policy, first_step_only, child_rng(rng_seed, stream + 1))
    try:
        expected = expected_gradient(spec, oracle, policy, first_step_only)
        source = "dp"
    except (ValueError, KeyError):
        expected = samples.mean(axis=0)
        source = "monte-carlo"
    return metrics_from_samples(spec.label, samples, truth, expected,
                                "t0" if first_step_only else "full", source)


def evaluate_many(specs: Sequence[EstimatorSpec], mdp, policy, batch: TrajectoryBatch, oracle: Oracle,
                  first_step_only: bool = False, rng_seed: int = 0) -> list[MetricsRecord]:
    return [evaluate_estimator(s, mdp, policy, oracle=oracle, batch=batch, first_step_only=first_step_only,
                               rng_seed=rng_seed, stream=1000 + i) for i, s in enumerate(specs)]


# ----------------------------------------------------------------------
# Monte-Carlo consistency


@dataclass
class ConsistencyReport:
    estimator: str
    mean: np.ndarray
    expected: np.ndarray
    se: np.ndarray
    max_z: float
    fraction_within: float
    within: bool


def monte_carlo_consistency(spec: EstimatorSpec, mdp, policy, oracle: Oracle, n: int, rng_seed: int,
                            n_se: float = 3.0, chunk: int = 20_000) -> ConsistencyReport:
    """Compare the Monte-Carlo mean gradient with the DP expectation componentwise.

    Coordinates whose sample standard error is zero must match to 1e-12.
    """
    probs = policy.prob_table(mdp)
    total = None
    total_sq = None
    rng_sample = child_rng(rng_seed, 0)
    rng_est = child_rng(rng_seed, 1)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        batch = sample_batch(mdp, probs, m, rng_sample)
        g = estimate_batch(spec, batch, policy, rng_est)
        total = g.sum(axis=0) if total is None else total + g.sum(axis=0)
        total_sq = (g ** 2).sum(axis=0) if total_sq is None else total_sq + (g ** 2).sum(axis=0)
        done += m
    mean = total / n
    var = np.maximum(total_sq / n - mean ** 2, 0.0) * n / (n - 1)
    se = np.sqrt(var / n)
    expected = expected_gradient(spec, oracle, policy)
    diff = np.abs(mean - expected)
    zero = se <= 1e-12 * (1.0 + np.abs(expected))
    ok = np.where(zero, diff <= 1e-12 * (1.0 + np.abs(expected)) + 1e-12, diff <= n_se * se)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(zero, 0.0, diff / np.where(zero, 1.0, se))
    return ConsistencyReport(spec.label, mean, expected, se, float(z.max()), float(ok.mean()), bool(ok.all()))


# ----------------------------------------------------------------------
# shadow training


@dataclass
class ShadowCheckpoint:
    checkpoint: int
    episodes: int
    batch_digest: str
    records: list[MetricsRecord]
    first_step: list[MetricsRecord] = field(default_factory=list)
    treasure_probability: float | None = None


def shadow_training(mdp, policy, make_specs: Callable[[Oracle], list[EstimatorSpec]], num_updates: int,
                    checkpoint_every: int, rng_seed: int, batch_size: int = 8, eval_samples: int = DEFAULT_SAMPLES,
                    optimizer=None, with_first_step: bool = True) -> list[ShadowCheckpoint]:
    """Train ``policy`` with the ground-truth Q-critic and evaluate estimators along the way.

    At every checkpoint the estimators returned by ``make_specs`` are all
    evaluated on one shared batch drawn from the current policy. The policy
    object is updated in place.
    """
    from .funcapprox import AdamW

    opt = optimizer if optimizer is not None else AdamW(lr=0.01)
    out: list[ShadowCheckpoint] = []
    train_rng = child_rng(rng_seed, 0)
    for step in range(num_updates + 1):
        oracle = Oracle(mdp, policy)
        if step % checkpoint_every == 0:
            k = step // checkpoint_every
            batch = sample_batch(mdp, policy.prob_table(mdp), eval_samples, child_rng(rng_seed, 10_000 + k))
            specs = make_specs(oracle)
            recs = evaluate_many(specs, mdp, policy, batch, oracle, rng_seed=rng_seed + k)
            first = evaluate_many(specs, mdp, policy, batch, oracle, True, rng_seed + k) if with_first_step else []
            tp = None
            if "treasure_states" in mdp.info:
                from .dp import state_visits

                tp = float(state_visits(mdp, policy.prob_table(mdp))[mdp.info["treasure_states"]].sum())
            out.append(ShadowCheckpoint(k, step * batch_size, batch.digest(), recs, first, tp))
        if step == num_updates:
            break
        batch = sample_batch(mdp, policy.prob_table(mdp), batch_size, train_rng)
        spec = EstimatorSpec("q-critic", Q=oracle.Q)
        grad = estimate_batch(spec, batch, policy).mean(axis=0)
        if policy.entropy_coefficient:
            grad = grad + policy.entropy_coefficient * policy.entropy_grad(batch.states[batch.mask]) / len(batch)
        policy.params = opt.step(policy.params, -grad)
    return out


# ----------------------------------------------------------------------
# perturbation robustness


def perturb_table(table: np.ndarray, sigma: float, rng: np.random.Generator, offset: float = 0.0) -> np.ndarray:
    """``(table + offset) * (1 + sigma * eps) - offset`` with standard normal ``eps``."""
    eps = rng.standard_normal(np.shape(table))
    return (np.asarray(table) + offset) * (1.0 + sigma * eps) - offset


def perturb_spec(spec: EstimatorSpec, sigma: float, rng: np.random.Generator,
                 target: str = "hindsight") -> EstimatorSpec:
    """Copy of ``spec`` with its models multiplied elementwise by ``1 + sigma * eps``.

    For coefficient tables ``target="hindsight"`` perturbs the hindsight
    ratio ``w + 1``; ``target="coefficients"`` perturbs ``w`` itself.
    """
    fields_ = dict(spec.__dict__)
    offset = 1.0 if target == "hindsight" else 0.0
    if spec.coefficients is not None:
        fields_["coefficients"] = perturb_table(getattr(spec.coefficients, "w", spec.coefficients), sigma, rng, offset)
    if spec.V is not None:
        fields_["V"] = perturb_table(spec.V, sigma, rng)
    if spec.Q is not None:
        fields_["Q"] = perturb_table(spec.Q, sigma, rng)
    return EstimatorSpec(**fields_)


def perturbation_sweep(mdp, policy, specs: Sequence[EstimatorSpec], sigmas=PERTURBATION_SIGMAS,
                       noise_seeds: Sequence[int] = range(30), sample_count: int = DEFAULT_SAMPLES,
                       rng_seed: int = 0, target: str = "hindsight", oracle: Oracle | None = None):
    """SNR (dB) per estimator and sigma, averaged over noise seeds on one shared batch.

    Returns ``{label: {sigma: [snr_db per noise seed]}}``.
    """
    oracle = oracle if oracle is not None else Oracle(mdp, policy)
    batch = sample_batch(mdp, policy.prob_table(mdp), sample_count, child_rng(rng_seed, 0))
    truth = oracle.true_gradient(policy)
    norm2 = float(truth @ truth)
    out: dict[str, dict[float, list[float]]] = {}
    for i, spec in enumerate(specs):
        per_sigma: dict[float, list[float]] = {}
        for sigma in sigmas:
            vals = []
            for seed in noise_seeds:
                noisy = spec if sigma == 0 else perturb_spec(spec, sigma, child_rng(seed, 7919 + i), target)
                g = gradient_samples(noisy, batch, policy, rng=child_rng(rng_seed, 1))
                err = g - truth
                vals.append(to_db(norm2 / float(np.einsum("ij,ij->i", err, err).mean())))
            per_sigma[float(sigma)] = vals
        out[spec.label] = per_sigma
    return out


# ----------------------------------------------------------------------
# tree variance sweep


def tree_variance_sweep(depth: int = 4, num_actions: int = 6, overlaps: Sequence[int] | None = None,
                        env_seeds: Sequence[int] = range(10), group_counts: Sequence[int] = (4, 32),
                        sample_count: int = DEFAULT_SAMPLES, rng_seed: int = 0) -> list[dict]:
    """Normalized variance of COCOA variants on the tree under the uniform policy.

    Returns one row per (overlap, env seed, estimator) with ``var_db``.
    """
    from .encodings import reward_encoding, state_encoding
    from .envs.tree import TreeConfig, build_tree, tree_group_encoding
    from .policy import TabularSoftmaxPolicy

    overlaps = range(num_actions) if overlaps is None else overlaps
    rows = []
    for o_s in overlaps:
        for seed in env_seeds:
            cfg = TreeConfig(depth=depth, num_actions=num_actions, state_overlap=o_s, env_seed=seed)
            mdp = build_tree(cfg)
            policy = TabularSoftmaxPolicy.for_mdp(mdp)
            oracle = Oracle(mdp, policy)
            encs = [("cocoa-reward", reward_encoding(mdp))]
            encs += [(f"cocoa-group-{g}", tree_group_encoding(mdp, cfg, g)) for g in group_counts]
            encs.append(("hca-plus", state_encoding(mdp)))
            specs = [EstimatorSpec("cocoa", encoding=e, coefficients=oracle.coefficients(e), name=n)
                     for n, e in encs]
            specs.append(EstimatorSpec("reinforce", name="reinforce"))
            batch = sample_batch(mdp, policy.prob_table(mdp), sample_count, child_rng(rng_seed, 100 * o_s + seed))
            for rec in evaluate_many(specs, mdp, policy, batch, oracle, rng_seed=rng_seed):
                rows.append({"overlap": o_s, "env_seed": seed, **rec.as_row()})
    return rows
