"""Deterministic rewarding-outcome encodings ``u = f(s, a, r)``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np

from .mdp import TabularMDP


class EncodingNotPredictive(ValueError):
    pass


@dataclass(eq=False)
class OutcomeEncoding:
    """Outcome ids for every ``(s, a, reward-support index j)``.

    ``table[s, a, j]`` is the outcome of receiving the ``j``-th reward of
    ``(s, a)``. Entries of the absorbing state are never visited by
    trajectories and are ignored by the oracle.
    """

    kind: str
    table: np.ndarray
    num_outcomes: int
    labels: list = field(default_factory=list)
    features: np.ndarray | None = None
    values: np.ndarray | None = None

    def encode(self, mdp: TabularMDP, state: int, action: int, reward: float) -> int:
        return int(self.table[state, action, mdp.reward_index(state, action, reward)])

    def encode_batch(self, batch) -> np.ndarray:
        return self.table[batch.states, batch.actions, batch.reward_index]

    @property
    def outcome_features(self) -> np.ndarray:
        return np.eye(self.num_outcomes) if self.features is None else self.features

    def outcome_indicator(self, mdp: TabularMDP) -> np.ndarray:
        """``I[s, a, j, u] = 1[table[s, a, j] == u]`` weighted by ``p(j | s, a)``: shape (S, A, U)."""
        S, A, J = self.table.shape
        out = np.zeros((S, A, self.num_outcomes))
        s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        for j in range(J):
            np.add.at(out, (s_idx, a_idx, self.table[:, :, j]), mdp.reward_probs[:, :, j])
        out[mdp.absorbing_state] = 0.0
        return out

    def outcome_reward_table(self, mdp: TabularMDP) -> np.ndarray:
        """``r(u) = E[R | U = u]`` pooled uniformly over live ``(s, a)`` pairs.

        Well defined with respect to the pooling only for fully predictive
        encodings; outcomes that never occur get NaN. Reward encodings return
        their support values exactly.
        """
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        num = np.zeros(self.num_outcomes)
        den = np.zeros(self.num_outcomes)
        for s in range(mdp.num_states):
            if s == mdp.absorbing_state:
                continue
            for a in range(mdp.num_actions):
                for j in range(mdp.reward_values.shape[2]):
                    p = mdp.reward_probs[s, a, j]
                    if p > 0:
                        u = self.table[s, a, j]
                        num[u] += p * mdp.reward_values[s, a, j]
                        den[u] += p
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)

    def outcome_reward(self, mdp: TabularMDP, u: int) -> float:
        return float(self.outcome_reward_table(mdp)[u])

    def predictive_violations(self, mdp: TabularMDP, probs: np.ndarray | None = None,
                              atol: float = 1e-12) -> list[tuple]:
        """Outcomes whose conditional reward distribution is not unique.

        Without ``probs`` every ``(s, a)`` emitting ``u`` must share
        ``p(r | s, a, u)``. With a policy table the comparison is per state,
        on ``p(r | s, u)`` with the action drawn from the policy, which is
        what unbiasedness needs (it admits ``U = S`` with action-dependent
        rewards). Returns ``(u, where1, where2)`` witnesses.
        """
        reference: dict[int, tuple[dict, tuple]] = {}
        bad = []
        actions = range(mdp.num_actions)
        for s in range(mdp.num_states):
            if s == mdp.absorbing_state:
                continue
            units = [(a,) for a in actions] if probs is None else [tuple(actions)]
            for unit in units:
                per_u: dict[int, dict[float, float]] = {}
                for a in unit:
                    weight = 1.0 if probs is None else float(probs[s, a])
                    if weight <= 0:
                        continue
                    for j in range(mdp.reward_values.shape[2]):
                        p = mdp.reward_probs[s, a, j] * weight
                        if p <= 0:
                            continue
                        d = per_u.setdefault(int(self.table[s, a, j]), {})
                        r = float(mdp.reward_values[s, a, j])
                        d[r] = d.get(r, 0.0) + p
                where = (s, unit[0]) if probs is None else (s,)
                for u, dist in per_u.items():
                    total = sum(dist.values())
                    dist = {r: p / total for r, p in dist.items()}
                    if u not in reference:
                        reference[u] = (dist, where)
                        continue
                    ref, first = reference[u]
                    keys = set(ref) | set(dist)
                    if any(abs(ref.get(k, 0.0) - dist.get(k, 0.0)) > atol for k in keys):
                        bad.append((u, first, where))
        return bad

    def is_fully_predictive(self, mdp: TabularMDP, probs: np.ndarray | None = None) -> bool:
        return not self.predictive_violations(mdp, probs)

    def require_fully_predictive(self, mdp: TabularMDP, probs: np.ndarray | None = None) -> None:
        bad = self.predictive_violations(mdp, probs)
        if bad:
            raise EncodingNotPredictive(f"{self.kind} encoding mixes reward distributions, e.g. {bad[0]}")


def state_encoding(mdp: TabularMDP) -> OutcomeEncoding:
    """``U = S``: the outcome is the state in which the reward was received."""
    J = mdp.reward_values.shape[2]
    table = np.broadcast_to(np.arange(mdp.num_states)[:, None, None], (mdp.num_states, mdp.num_actions, J)).copy()
    return OutcomeEncoding("state", table, mdp.num_states, labels=list(mdp.state_labels),
                           features=mdp.state_features)


def reward_encoding(mdp: TabularMDP) -> OutcomeEncoding:
    """``U = R``: outcome ids by exact equality on the finite reward support."""
    live = mdp.reward_probs > 0
    live[mdp.absorbing_state] = False
    values = np.unique(mdp.reward_values[live])
    lookup = {float(v): i for i, v in enumerate(values)}
    if 0.0 not in lookup:
        # absorbing and padding entries need some id; a zero reward is harmless
        lookup[0.0] = len(values)
        values = np.append(values, 0.0)
    table = np.vectorize(lambda r: lookup.get(float(r), lookup[0.0]))(mdp.reward_values).astype(np.int64)
    return OutcomeEncoding("reward", table, len(values), labels=[float(v) for v in values], values=values)


def encoding_from_function(mdp: TabularMDP, fn: Callable[[int, int, float], Hashable], kind: str) -> OutcomeEncoding:
    """Assign outcome ids to the distinct keys ``fn(s, a, r)`` in scan order."""
    S, A, J = mdp.reward_values.shape
    table = np.zeros((S, A, J), dtype=np.int64)
    ids: dict[Hashable, int] = {}
    for s in range(S):
        for a in range(A):
            for j in range(J):
                live = mdp.reward_probs[s, a, j] > 0 and s != mdp.absorbing_state
                if not live:
                    continue
                key = fn(s, a, float(mdp.reward_values[s, a, j]))
                table[s, a, j] = ids.setdefault(key, len(ids))
    if not ids:
        ids[None] = 0
    return OutcomeEncoding(kind, table, len(ids), labels=list(ids))
