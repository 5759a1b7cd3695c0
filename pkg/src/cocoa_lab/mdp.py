"""Enumerable tabular MDPs, trajectories and batched sampling."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Iterator, Sequence

import numpy as np

PROB_ATOL = 1e-12
ABSORPTION_ATOL = 1e-9


class MDPStructureError(ValueError):
    """Raised when an MDP violates its structural invariants."""


class StateSpaceTooLarge(MDPStructureError):
    """Raised when enumeration or a dense DP table would exceed the size cap."""


def child_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator for stream ``stream`` of experiment seed ``seed``.

    Streams are derived with ``SeedSequence([seed, stream])`` so that parallel
    jobs that share a seed but not a stream index never share random numbers.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass(eq=False)
class TabularMDP:
    """Finite MDP with padded sparse transition and reward supports.

    ``next_states[s, a, k]`` / ``next_probs[s, a, k]`` list the successors of
    ``(s, a)``; ``reward_values[s, a, j]`` / ``reward_probs[s, a, j]`` list its
    finite reward support. Padding entries carry probability zero.
    """

    num_states: int
    num_actions: int
    start_state: int
    absorbing_state: int
    horizon: int
    next_states: np.ndarray
    next_probs: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray
    state_features: np.ndarray
    state_labels: list = field(default_factory=list)
    name: str = "mdp"
    info: dict = field(default_factory=dict)

    @classmethod
    def from_lists(
        cls,
        transitions: Sequence[Sequence[Sequence[tuple[int, float]]]],
        rewards: Sequence[Sequence[Sequence[tuple[float, float]]]],
        start_state: int,
        absorbing_state: int,
        horizon: int,
        state_features: np.ndarray | None = None,
        state_labels: list | None = None,
        name: str = "mdp",
        info: dict | None = None,
        validate: bool = True,
    ) -> "TabularMDP":
        num_states = len(transitions)
        num_actions = len(transitions[0])
        kmax = max(len(transitions[s][a]) for s in range(num_states) for a in range(num_actions))
        jmax = max(len(rewards[s][a]) for s in range(num_states) for a in range(num_actions))
        next_states = np.full((num_states, num_actions, kmax), absorbing_state, dtype=np.int64)
        next_probs = np.zeros((num_states, num_actions, kmax))
        reward_values = np.zeros((num_states, num_actions, jmax))
        reward_probs = np.zeros((num_states, num_actions, jmax))
        for s in range(num_states):
            for a in range(num_actions):
                for k, (s2, p) in enumerate(transitions[s][a]):
                    next_states[s, a, k] = s2
                    next_probs[s, a, k] = p
                for j, (r, p) in enumerate(rewards[s][a]):
                    reward_values[s, a, j] = r
                    reward_probs[s, a, j] = p
        if state_features is None:
            state_features = np.eye(num_states)
        mdp = cls(
            num_states=num_states,
            num_actions=num_actions,
            start_state=start_state,
            absorbing_state=absorbing_state,
            horizon=horizon,
            next_states=next_states,
            next_probs=next_probs,
            reward_values=reward_values,
            reward_probs=reward_probs,
            state_features=np.asarray(state_features, dtype=float),
            state_labels=list(state_labels) if state_labels is not None else list(range(num_states)),
            name=name,
            info=dict(info or {}),
        )
        if validate:
            mdp.validate()
        return mdp

    # ------------------------------------------------------------------
    # derived tables

    @cached_property
    def transition_matrix(self) -> np.ndarray:
        """Dense ``P[s, a, s']``."""
        P = np.zeros((self.num_states, self.num_actions, self.num_states))
        s_idx, a_idx = np.meshgrid(np.arange(self.num_states), np.arange(self.num_actions), indexing="ij")
        for k in range(self.next_states.shape[2]):
            np.add.at(P, (s_idx, a_idx, self.next_states[:, :, k]), self.next_probs[:, :, k])
        return P

    @cached_property
    def expected_reward(self) -> np.ndarray:
        """``r(s, a) = E[R | s, a]``."""
        return np.sum(self.reward_values * self.reward_probs, axis=2)

    @cached_property
    def _next_cdf(self) -> np.ndarray:
        return np.cumsum(self.next_probs, axis=2)

    @cached_property
    def _reward_cdf(self) -> np.ndarray:
        return np.cumsum(self.reward_probs, axis=2)

    @property
    def feature_dim(self) -> int:
        return self.state_features.shape[1]

    def reward_index(self, state: int, action: int, reward: float) -> int:
        """Support index of ``reward`` for ``(state, action)`` by exact equality."""
        hits = np.nonzero(
            (self.reward_values[state, action] == reward) & (self.reward_probs[state, action] > 0)
        )[0]
        if hits.size == 0:
            raise ValueError(f"reward {reward!r} not in the support of ({state}, {action})")
        return int(hits[0])

    # ------------------------------------------------------------------

    def validate(self) -> None:
        """Check normalization, absorption and the uniform-policy horizon."""
        tp = self.next_probs.sum(axis=2)
        if np.any(np.abs(tp - 1.0) > PROB_ATOL) or np.any(self.next_probs < 0):
            raise MDPStructureError(f"{self.name}: transition probabilities do not sum to 1")
        rp = self.reward_probs.sum(axis=2)
        if np.any(np.abs(rp - 1.0) > PROB_ATOL) or np.any(self.reward_probs < 0):
            raise MDPStructureError(f"{self.name}: reward probabilities do not sum to 1")
        z = self.absorbing_state
        live = self.next_probs[z] > 0
        if np.any(self.next_states[z][live] != z):
            raise MDPStructureError(f"{self.name}: absorbing state must transition to itself")
        live_r = self.reward_probs[z] > 0
        if np.any(self.reward_values[z][live_r] != 0.0):
            raise MDPStructureError(f"{self.name}: absorbing state must have zero reward")
        mass = self.absorption_mass(self.horizon)
        if abs(mass - 1.0) > ABSORPTION_ATOL:
            raise MDPStructureError(
                f"{self.name}: absorption mass {mass!r} after {self.horizon} steps under the uniform policy"
            )

    def absorption_mass(self, steps: int, probs: np.ndarray | None = None) -> float:
        """Probability of being absorbed after ``steps`` steps from the start state."""
        if probs is None:
            probs = np.full((self.num_states, self.num_actions), 1.0 / self.num_actions)
        d = np.zeros(self.num_states)
        d[self.start_state] = 1.0
        # sparse propagation keeps this cheap for long horizons
        for _ in range(steps):
            flow = d[:, None, None] * probs[:, :, None] * self.next_probs
            d = np.bincount(self.next_states.ravel(), weights=flow.ravel(), minlength=self.num_states)
        return float(d[self.absorbing_state])


# ----------------------------------------------------------------------
# enumeration from structured dynamics


StepFn = Callable[[Hashable, int], tuple[list[tuple[Hashable, float]], list[tuple[float, float]]]]


def enumerate_mdp(
    start: Hashable,
    num_actions: int,
    step: StepFn,
    horizon: int,
    features: Callable[[Hashable], np.ndarray] | None = None,
    feature_dim: int | None = None,
    max_states: int = 200_000,
    name: str = "mdp",
    info: dict | None = None,
) -> TabularMDP:
    """Build a :class:`TabularMDP` by depth-first search over ``step``.

    ``step(state, action)`` returns ``(successors, rewards)`` where a successor
    of ``None`` denotes the absorbing state. States are numbered in discovery
    order (action order, then successor order); the absorbing state gets the
    last id. Identical ``(successor, prob)`` entries are merged.
    """
    ids: dict[Hashable, int] = {start: 0}
    labels: list[Hashable] = [start]
    raw: list[list[tuple[list, list]]] = []
    stack = [start]
    order: list[Hashable] = []
    while stack:
        s = stack.pop()
        order.append(s)
        children = []
        for a in range(num_actions):
            succ, _ = step(s, a)
            for s2, p in succ:
                if s2 is None or p <= 0:
                    continue
                if s2 not in ids:
                    ids[s2] = len(labels)
                    labels.append(s2)
                    children.append(s2)
                    if len(labels) > max_states:
                        raise StateSpaceTooLarge(f"{name}: more than {max_states} states")
        # reversed so the first action's children are expanded first
        stack.extend(reversed(children))
    absorbing = len(labels)
    n = absorbing + 1
    transitions: list = [None] * n
    rewards: list = [None] * n
    for s, sid in ids.items():
        t_row, r_row = [], []
        for a in range(num_actions):
            succ, rew = step(s, a)
            merged: dict[int, float] = {}
            for s2, p in succ:
                if p <= 0:
                    continue
                k = absorbing if s2 is None else ids[s2]
                merged[k] = merged.get(k, 0.0) + p
            t_row.append(sorted(merged.items()))
            r_row.append([(float(r), float(p)) for r, p in rew if p > 0] or [(0.0, 1.0)])
        transitions[sid] = t_row
        rewards[sid] = r_row
    transitions[absorbing] = [[(absorbing, 1.0)] for _ in range(num_actions)]
    rewards[absorbing] = [[(0.0, 1.0)] for _ in range(num_actions)]
    labels.append("absorbing")
    if features is not None:
        dim = feature_dim if feature_dim is not None else len(features(start))
        feats = np.zeros((n, dim))
        for s, sid in ids.items():
            feats[sid] = features(s)
    else:
        feats = None
    return TabularMDP.from_lists(
        transitions,
        rewards,
        start_state=0,
        absorbing_state=absorbing,
        horizon=horizon,
        state_features=feats,
        state_labels=labels,
        name=name,
        info=info,
    )


# ----------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """One episode: ``states[t], actions[t], rewards[t]`` for ``t < len``.

    ``reward_index[t]`` is the support index of ``rewards[t]`` and is what
    outcome encodings consume. ``terminal`` is true when the step after the
    last one is the absorbing state.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    reward_index: np.ndarray
    terminal: bool = True

    def __len__(self) -> int:
        return int(self.states.shape[0])

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        return [(int(s), int(a), float(r)) for s, a, r in zip(self.states, self.actions, self.rewards)]

    def to_batch(self, absorbing_state: int) -> "TrajectoryBatch":
        T = len(self)
        return TrajectoryBatch(
            states=self.states[None, :].astype(np.int64),
            actions=self.actions[None, :].astype(np.int64),
            rewards=self.rewards[None, :].astype(float),
            reward_index=self.reward_index[None, :].astype(np.int64),
            lengths=np.array([T]),
            absorbing_state=absorbing_state,
        )


@dataclass
class TrajectoryBatch:
    """Padded batch of trajectories; padding uses the absorbing state."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    reward_index: np.ndarray
    lengths: np.ndarray
    absorbing_state: int

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def __getitem__(self, i: int) -> Trajectory:
        T = int(self.lengths[i])
        return Trajectory(
            states=self.states[i, :T].copy(),
            actions=self.actions[i, :T].copy(),
            rewards=self.rewards[i, :T].copy(),
            reward_index=self.reward_index[i, :T].copy(),
        )

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(len(self)):
            yield self[i]

    @property
    def max_length(self) -> int:
        return int(self.states.shape[1])

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.max_length)[None, :] < self.lengths[:, None]

    def next_states(self) -> np.ndarray:
        """``S_{t+1}`` for every padded position (absorbing past the end)."""
        nxt = np.full_like(self.states, self.absorbing_state)
        nxt[:, :-1] = self.states[:, 1:]
        return nxt

    def returns(self, gamma: float = 1.0) -> np.ndarray:
        """Discounted returns-to-go ``Z_t = sum_k gamma^k R_{t+k}``."""
        Z = np.zeros_like(self.rewards)
        acc = np.zeros(len(self))
        for t in range(self.max_length - 1, -1, -1):
            acc = self.rewards[:, t] + gamma * acc
            Z[:, t] = acc
        return Z * self.mask

    def subset(self, idx) -> "TrajectoryBatch":
        idx = np.asarray(idx)
        lengths = self.lengths[idx]
        T = int(lengths.max()) if lengths.size else 0
        return TrajectoryBatch(
            states=self.states[idx, :T],
            actions=self.actions[idx, :T],
            rewards=self.rewards[idx, :T],
            reward_index=self.reward_index[idx, :T],
            lengths=lengths,
            absorbing_state=self.absorbing_state,
        )

    def digest(self) -> str:
        """SHA-256 over the batch contents, for identity checks."""
        h = hashlib.sha256()
        for arr in (self.states, self.actions, self.rewards, self.reward_index, self.lengths):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    @classmethod
    def concatenate(cls, batches: Sequence["TrajectoryBatch"]) -> "TrajectoryBatch":
        T = max(b.max_length for b in batches)
        z = batches[0].absorbing_state

        def pad(arr, fill):
            out = np.full((arr.shape[0], T), fill, dtype=arr.dtype)
            out[:, : arr.shape[1]] = arr
            return out

        return cls(
            states=np.concatenate([pad(b.states, z) for b in batches]),
            actions=np.concatenate([pad(b.actions, 0) for b in batches]),
            rewards=np.concatenate([pad(b.rewards, 0.0) for b in batches]),
            reward_index=np.concatenate([pad(b.reward_index, 0) for b in batches]),
            lengths=np.concatenate([b.lengths for b in batches]),
            absorbing_state=z,
        )


def _inverse_cdf(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.sum(cdf < u[:, None], axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def sample_batch(
    mdp: TabularMDP,
    probs: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """Sample ``n`` episodes under the action-probability table ``probs[s, a]``.

    Three uniform vectors of length ``n`` are drawn per time step (action,
    reward, transition) so the result is a deterministic function of the
    generator state.
    """
    probs = np.asarray(probs, dtype=float)
    action_cdf = np.cumsum(probs, axis=1)
    H = mdp.horizon
    states = np.full((n, H), mdp.absorbing_state, dtype=np.int64)
    actions = np.zeros((n, H), dtype=np.int64)
    rewards = np.zeros((n, H))
    ridx = np.zeros((n, H), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    s = np.full(n, mdp.start_state, dtype=np.int64)
    alive = s != mdp.absorbing_state
    t = 0
    while alive.any():
        if t >= H:
            raise MDPStructureError(f"{mdp.name}: horizon {H} exceeded without absorption")
        u_a, u_r, u_s = rng.random(n), rng.random(n), rng.random(n)
        live = np.nonzero(alive)[0]
        sl = s[live]
        a = _inverse_cdf(action_cdf[sl], u_a[live])
        j = _inverse_cdf(mdp._reward_cdf[sl, a], u_r[live])
        k = _inverse_cdf(mdp._next_cdf[sl, a], u_s[live])
        states[live, t] = sl
        actions[live, t] = a
        rewards[live, t] = mdp.reward_values[sl, a, j]
        ridx[live, t] = j
        lengths[live] += 1
        s[live] = mdp.next_states[sl, a, k]
        alive = s != mdp.absorbing_state
        t += 1
    T = max(t, 1)
    return TrajectoryBatch(
        states=states[:, :T],
        actions=actions[:, :T],
        rewards=rewards[:, :T],
        reward_index=ridx[:, :T],
        lengths=lengths,
        absorbing_state=mdp.absorbing_state,
    )


def sample_trajectories(mdp: TabularMDP, policy, n: int, rng_seed: int, stream: int = 0) -> TrajectoryBatch:
    """Sample ``n`` episodes from a seed; same arguments, same batch."""
    return sample_batch(mdp, policy.prob_table(mdp), n, child_rng(rng_seed, stream))


def sample_trajectory(mdp: TabularMDP, policy, rng_seed: int) -> Trajectory:
    """Sample a single episode; deterministic for a fixed seed."""
    return sample_trajectories(mdp, policy, 1, rng_seed)[0]
