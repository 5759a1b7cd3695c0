"""Online policy-gradient training with learned credit-assignment models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import Oracle, return_distribution, state_visits
from .encodings import reward_encoding, state_encoding
from .estimators import EstimatorSpec, estimate_batch
from .funcapprox import AdamW, NonFiniteGradientError, save_checkpoint
from .learn import (
    FeatureConfig, ReturnBins, TabularHindsight, TabularReturnHindsight, TdCritic, reward_feature_pipeline,
)
from .mdp import TabularMDP, child_rng, sample_batch
from .policy import MlpSoftmaxPolicy, TabularSoftmaxPolicy

# estimator name -> (kind, model family)
TRAINABLE = {
    "reinforce": ("reinforce", None),
    "advantage": ("advantage", "critic-v"),
    "q-critic": ("q-critic", "critic-q"),
    "trajcv": ("trajcv", "critic-q"),
    "hca-plus": ("hca-plus", "hindsight-state"),
    "cocoa-reward": ("cocoa", "hindsight-reward"),
    "cocoa-feature": ("cocoa", "hindsight-feature"),
    "hca-return": ("hca-return", "return"),
    "counterfactual-return": ("counterfactual-return", "return"),
}


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    estimator: str = "cocoa-reward"
    policy: str = "mlp"
    policy_hidden: tuple = (64,)
    num_batches: int = 400
    batch_size: int = 8
    policy_lr: float = 0.05
    epsilon: float = 0.05
    entropy_coefficient: float = 0.03
    clip_norm: float | None = 1.0
    hindsight_decay: float | None = None
    hindsight_conditioning: str = "ratio"
    hindsight_prior: float = 1.0
    critic_lambda: float = 0.9
    critic_lr: float | str = 0.1
    models: str = "learned"
    eval_every: int = 10
    warmup_batches: int = 0
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if self.estimator not in TRAINABLE:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {sorted(TRAINABLE)}")
        if self.policy not in ("tabular", "mlp"):
            raise ValueError("policy must be 'tabular' or 'mlp'")
        self.policy_hidden = tuple(int(h) for h in self.policy_hidden)
        if self.models not in ("learned", "dp"):
            raise ValueError("models must be 'learned' or 'dp'")
        if self.num_batches < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("budgets must be non-negative and eval/batch sizes positive")


@dataclass
class LearningCurve:
    episodes: list = field(default_factory=list)
    metric: list = field(default_factory=list)
    metric_name: str = "treasure_rate"
    policy: TabularSoftmaxPolicy | None = None


def evaluation_metric(mdp: TabularMDP, probs: np.ndarray) -> tuple[str, float]:
    """Treasure probability on key-to-door tracks, else the exact start value."""
    if "treasure_states" in mdp.info:
        return "treasure_rate", float(state_visits(mdp, probs)[mdp.info["treasure_states"]].sum())
    if "query_states" in mdp.info:
        return "fraction_correct", _fraction_correct(mdp, probs)
    from .dp import Oracle as _O

    return "value", float(_O(mdp, probs).V[mdp.start_state])


def _fraction_correct(mdp, probs):
    d = state_visits(mdp, probs)
    q = mdp.info["query_states"]
    correct = mdp.info["correct_action"]
    mass = d[q].sum()
    if mass == 0:
        return 0.0
    return float(np.sum(d[q] * probs[q, correct[q]]) / mass)


class _Models:
    """Learners for one estimator, refreshed from every training batch."""

    def __init__(self, cfg: TrainConfig, mdp: TabularMDP, policy, rng):
        self.cfg = cfg
        self.kind, self.family = TRAINABLE[cfg.estimator]
        S, A = mdp.num_states, mdp.num_actions
        self.encoding = None
        fam = self.family or ""
        if fam.startswith("hindsight"):
            if fam == "hindsight-state":
                self.encoding = state_encoding(mdp)
            elif fam == "hindsight-reward":
                self.encoding = reward_encoding(mdp)
            else:
                probs = policy.prob_table(mdp)
                buf = sample_batch(mdp, np.full_like(probs, 1.0 / A), cfg.feature.batches * cfg.feature.batch_size,
                                   child_rng(rng, 3))
                self.encoding = reward_feature_pipeline(mdp, buf, cfg.feature, child_rng(rng, 4)).encoding
            self.hindsight = TabularHindsight(S, A, self.encoding, decay=cfg.hindsight_decay,
                                             conditioning=cfg.hindsight_conditioning, prior=cfg.hindsight_prior)
        elif fam.startswith("critic"):
            self.critic = TdCritic(S, A, "V" if fam == "critic-v" else "Q", lam=cfg.critic_lambda,
                                   lr=cfg.critic_lr, absorbing_state=mdp.absorbing_state)
        elif fam == "return":
            uniform = np.full((S, A), 1.0 / A)
            self.bins = ReturnBins(return_distribution(mdp, uniform).support)
            self.returns = TabularReturnHindsight(S, A, self.bins)

    def update(self, mdp, batch, policy) -> None:
        if self.cfg.models == "dp" or self.family is None:
            return
        if self.family.startswith("hindsight"):
            self.hindsight.update(batch, policy)
        elif self.family.startswith("critic"):
            self.critic.update(batch)
        else:
            self.returns.update(batch)

    def spec(self, mdp, policy) -> EstimatorSpec:
        probs = policy.prob_table(mdp)
        fam = self.family
        if fam is None:
            return EstimatorSpec(self.kind)
        if self.cfg.models == "dp":
            oracle = Oracle(mdp, policy)
            if fam.startswith("hindsight"):
                return EstimatorSpec(self.kind, encoding=self.encoding, coefficients=oracle.coefficients(self.encoding))
            if fam == "critic-v":
                return EstimatorSpec(self.kind, V=oracle.V)
            if fam == "critic-q":
                return EstimatorSpec(self.kind, Q=oracle.Q)
            dist = oracle.return_distribution()
            return EstimatorSpec(self.kind, return_hindsight=(dist.hindsight(probs), dist.lookup))
        if fam.startswith("hindsight"):
            return EstimatorSpec(self.kind, encoding=self.encoding, coefficients=self.hindsight.coefficients(probs))
        if fam == "critic-v":
            return EstimatorSpec(self.kind, V=self.critic.table())
        if fam == "critic-q":
            return EstimatorSpec(self.kind, Q=self.critic.table())
        return EstimatorSpec(self.kind, return_hindsight=self.returns.model(probs))


def make_policy(mdp: TabularMDP, cfg: TrainConfig, seed: int):
    """Tabular logits, or an MLP over state features (a linear map when ``policy_hidden`` is empty)."""
    if cfg.policy == "tabular":
        return TabularSoftmaxPolicy.for_mdp(mdp, epsilon=cfg.epsilon, entropy_coefficient=cfg.entropy_coefficient)
    return MlpSoftmaxPolicy(mdp.state_features, mdp.num_actions, cfg.policy_hidden, epsilon=cfg.epsilon,
                            entropy_coefficient=cfg.entropy_coefficient, rng=child_rng(seed, 2))


def train_policy(mdp: TabularMDP, cfg: TrainConfig, seed: int, switch: tuple[int, TabularMDP] | None = None,
                 checkpoint_dir=None) -> LearningCurve:
    """Train a policy online and record the greedy evaluation metric.

    A zero batch budget returns an empty curve.

    ``switch = (episode, mdp2)`` replaces the environment once ``episode``
    training episodes have been collected. ``mdp2`` must share the state
    space and reward-support layout so learned tables stay aligned.
    """
    policy = make_policy(mdp, cfg, seed)
    if cfg.num_batches == 0:
        return LearningCurve(policy=policy)
    models = _Models(cfg, mdp, policy, seed)
    opt = AdamW(lr=cfg.policy_lr, clip_norm=cfg.clip_norm)
    rng = child_rng(seed, 1)
    curve = LearningCurve()
    env = mdp
    for step in range(cfg.num_batches + 1):
        episodes = step * cfg.batch_size
        if switch is not None and episodes >= switch[0]:
            env = switch[1]
        if step % cfg.eval_every == 0 or step == cfg.num_batches:
            greedy = policy.copy(epsilon=0.0)
            name, value = evaluation_metric(env, greedy.prob_table(env))
            curve.metric_name = name
            if not curve.episodes or curve.episodes[-1] != episodes:
                curve.episodes.append(episodes)
                curve.metric.append(value)
        if step == cfg.num_batches:
            break
        batch = sample_batch(env, policy.prob_table(env), cfg.batch_size, rng)
        models.update(env, batch, policy)
        if step < cfg.warmup_batches:
            continue
        spec = models.spec(env, policy)
        grad = estimate_batch(spec, batch, policy).mean(axis=0)
        if cfg.entropy_coefficient:
            grad = grad + cfg.entropy_coefficient * policy.entropy_grad(batch.states[batch.mask]) / len(batch)
        try:
            new = opt.step(policy.params, -grad)
        except NonFiniteGradientError as err:
            _dump(checkpoint_dir, policy, step)
            raise TrainingDiverged(f"{cfg.estimator}: {err}") from err
        if not np.all(np.isfinite(new)):
            _dump(checkpoint_dir, policy, step)
            raise TrainingDiverged(f"{cfg.estimator}: non-finite policy parameters at batch {step}")
        policy.params = new
    curve.policy = policy
    return curve


def _dump(checkpoint_dir, policy, step):
    if checkpoint_dir is not None:
        save_checkpoint(f"{checkpoint_dir}/diverged-{step}", {"params": policy.params}, {"batch": step})


def episodes_to_threshold(curve: LearningCurve, threshold: float, after: int = 0) -> float:
    """First evaluated episode count ``>= after`` whose metric reaches ``threshold`` (inf if never)."""
    for e, m in zip(curve.episodes, curve.metric):
        if e >= after and m >= threshold:
            return float(e)
    return float("inf")
