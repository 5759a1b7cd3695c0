"""Exact dynamic programming on enumerable MDPs.

Everything is computed from the successor tensor ``M[s, a, s']``, the
expected (discounted) number of visits to ``s'`` at steps ``k >= 1`` after
taking ``a`` in ``s``. With ``N[s, s'] = sum_a pi(a|s) M[s, a, s']`` the
recursion to the horizon ``T`` is

    N_0 = 0,   N_t = gamma * P_pi (I + N_{t-1}),   M_T = gamma * P (I + N_{T-1}).

Outcome occurrences follow by contracting the last axis with the
probability of emitting outcome ``u`` in each state.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encodings import OutcomeEncoding, state_encoding
from .mdp import MDPStructureError, StateSpaceTooLarge, TabularMDP

DENSE_CAP = 20_000_000
RETURN_DECIMALS = 12


def as_probs(mdp: TabularMDP, policy) -> np.ndarray:
    """Accept a policy object or an (S, A) probability table."""
    if hasattr(policy, "prob_table"):
        return policy.prob_table(mdp)
    probs = np.asarray(policy, dtype=float)
    if probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"probability table must have shape {(mdp.num_states, mdp.num_actions)}")
    return probs


def check_dense_cap(mdp: TabularMDP, cap: int = DENSE_CAP) -> None:
    size = mdp.num_states * mdp.num_actions * mdp.num_states
    if size > cap:
        raise StateSpaceTooLarge(f"{mdp.name}: dense DP needs {size} entries, cap is {cap}")


@dataclass
class SuccessorMatrix:
    """``M[s, a, s']`` and its policy average ``N[s, s']`` at horizon ``T``."""

    M: np.ndarray
    N: np.ndarray
    T: int
    gamma: float = 1.0


def successor_matrix(mdp: TabularMDP, policy, T: int | None = None, gamma: float = 1.0,
                     cap: int = DENSE_CAP) -> SuccessorMatrix:
    check_dense_cap(mdp, cap)
    probs = as_probs(mdp, policy)
    T = mdp.horizon if T is None else int(T)
    S, A = mdp.num_states, mdp.num_actions
    P = mdp.transition_matrix
    if T <= 0:
        return SuccessorMatrix(np.zeros((S, A, S)), np.zeros((S, S)), 0, gamma)
    P_pi = np.einsum("sa,sat->st", probs, P)
    eye = np.eye(S)
    N = np.zeros((S, S))
    for _ in range(T - 1):
        N = gamma * P_pi @ (eye + N)
    M = gamma * np.einsum("sat,tu->sau", P, eye + N)
    N = np.einsum("sa,sau->su", probs, M)
    return SuccessorMatrix(M, N, T, gamma)


@dataclass
class CoefficientTable:
    """Contribution coefficients ``w[s, a, u]`` with reachability flags.

    ``occurrences[s, a, u]`` is the expected (discounted) number of times
    outcome ``u`` is emitted at steps ``k >= 1`` after ``(s, a)``.
    Entries with ``reachable[s, u] == False`` hold 0.
    """

    w: np.ndarray
    reachable: np.ndarray
    encoding: OutcomeEncoding | None = None
    occurrences: np.ndarray | None = None

    def hindsight(self, probs: np.ndarray) -> np.ndarray:
        """``h(a | s, u) = pi(a|s) * (w + 1)``, shape (S, A, U)."""
        return probs[:, :, None] * (self.w + 1.0)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        S, A, U = self.w.shape
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["s", "a", "u", "w"])
            for s in range(S):
                for u in range(U):
                    if not self.reachable[s, u]:
                        continue
                    for a in range(A):
                        out.writerow([s, a, u, repr(float(self.w[s, a, u]))])


def coefficients_from_occurrences(occ: np.ndarray, probs: np.ndarray, encoding=None) -> CoefficientTable:
    """``w = occ / sum_a pi occ - 1`` where the denominator is positive."""
    denom = np.einsum("sa,sau->su", probs, occ)
    reachable = denom > 0
    safe = np.where(reachable, denom, 1.0)
    w = np.where(reachable[:, None, :], occ / safe[:, None, :] - 1.0, 0.0)
    return CoefficientTable(w, reachable, encoding, occ)


# ----------------------------------------------------------------------


class Oracle:
    """Ground-truth quantities for one ``(mdp, policy, gamma)`` triple.

    Results are cached; build a new oracle after changing the policy.
    """

    def __init__(self, mdp: TabularMDP, policy, gamma: float = 1.0, horizon: int | None = None,
                 cap: int = DENSE_CAP):
        self.mdp = mdp
        self.policy = policy if hasattr(policy, "prob_table") else None
        self.probs = as_probs(mdp, policy)
        self.gamma = float(gamma)
        self.horizon = mdp.horizon if horizon is None else int(horizon)
        self.succ = successor_matrix(mdp, self.probs, self.horizon, self.gamma, cap)
        self._cache: dict = {}

    # basic tables -----------------------------------------------------

    @property
    def r(self) -> np.ndarray:
        return self.mdp.expected_reward

    @property
    def r_pi(self) -> np.ndarray:
        return np.sum(self.probs * self.r, axis=1)

    @property
    def V(self) -> np.ndarray:
        return self.r_pi + self.succ.N @ self.r_pi

    @property
    def Q(self) -> np.ndarray:
        return self.r + self.succ.M @ self.r_pi

    @property
    def advantage(self) -> np.ndarray:
        return self.Q - self.V[:, None]

    @property
    def visits(self) -> np.ndarray:
        """Expected (discounted) visits per state from the start, absorbing excluded."""
        d = self.succ.N[self.mdp.start_state].copy()
        d[self.mdp.start_state] += 1.0
        d[self.mdp.absorbing_state] = 0.0
        return d

    def occupancy(self) -> np.ndarray:
        """``P(S_t = s)`` for ``t < T``, shape (T, S)."""
        if "occupancy" not in self._cache:
            P_pi = np.einsum("sa,sat->st", self.probs, self.mdp.transition_matrix)
            d = np.zeros(self.mdp.num_states)
            d[self.mdp.start_state] = 1.0
            rows = []
            for _ in range(self.horizon):
                rows.append(d)
                d = d @ P_pi
            self._cache["occupancy"] = np.array(rows)
        return self._cache["occupancy"]

    # outcome tables ---------------------------------------------------

    def emission(self, encoding: OutcomeEncoding) -> tuple[np.ndarray, np.ndarray]:
        """Per state: ``p(U = u | s)`` and ``E[R 1[U = u] | s]`` under the policy."""
        key = ("emission", id(encoding))
        if key not in self._cache:
            mdp = self.mdp
            S, A, J = encoding.table.shape
            prob = np.zeros((S, A, encoding.num_outcomes))
            rew = np.zeros((S, A, encoding.num_outcomes))
            s_idx, a_idx = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
            for j in range(J):
                idx = (s_idx, a_idx, encoding.table[:, :, j])
                np.add.at(prob, idx, mdp.reward_probs[:, :, j])
                np.add.at(rew, idx, mdp.reward_probs[:, :, j] * mdp.reward_values[:, :, j])
            prob[mdp.absorbing_state] = 0.0
            rew[mdp.absorbing_state] = 0.0
            self._cache[key] = (prob, rew)
        prob, rew = self._cache[key]
        return np.einsum("sa,sau->su", self.probs, prob), np.einsum("sa,sau->su", self.probs, rew)

    def emission_by_action(self, encoding: OutcomeEncoding) -> np.ndarray:
        """``p(U = u | s, a)`` for the current step, shape (S, A, U)."""
        self.emission(encoding)
        return self._cache[("emission", id(encoding))][0]

    def coefficients(self, encoding: OutcomeEncoding) -> CoefficientTable:
        key = ("coef", id(encoding))
        if key not in self._cache:
            p_u, _ = self.emission(encoding)
            occ = self.succ.M @ p_u
            self._cache[key] = coefficients_from_occurrences(occ, self.probs, encoding)
        return self._cache[key]

    def state_coefficients(self) -> CoefficientTable:
        if "state_enc" not in self._cache:
            self._cache["state_enc"] = state_encoding(self.mdp)
        return self.coefficients(self._cache["state_enc"])

    def reward_occupancy(self, encoding: OutcomeEncoding) -> np.ndarray:
        """``sum_k gamma^k E[R_k 1[U_k = u] | S_0 = s]`` for ``k >= 1``, shape (S, U)."""
        _, r_u = self.emission(encoding)
        return self.succ.N @ r_u

    def hindsight(self, encoding: OutcomeEncoding) -> np.ndarray:
        return self.coefficients(encoding).hindsight(self.probs)

    # returns ------------------------------------------------------------

    def return_distribution(self) -> "ReturnDistribution":
        if "returns" not in self._cache:
            if self.gamma != 1.0:
                raise ValueError("return distributions are only defined for undiscounted returns")
            self._cache["returns"] = return_distribution(self.mdp, self.probs)
        return self._cache["returns"]

    # n-step tables ----------------------------------------------------

    def step_distributions(self, n: int) -> list[np.ndarray]:
        """``D[k][s, a, s'] = P(S_k = s' | S_0 = s, A_0 = a)`` for ``k = 1..n``."""
        P = self.mdp.transition_matrix
        P_pi = np.einsum("sa,sat->st", self.probs, P)
        out = [P]
        for _ in range(1, n):
            out.append(out[-1] @ P_pi)
        return out

    def nstep_tables(self, n: int, encoding: OutcomeEncoding, beta: float | None = None):
        """Coefficients ``w_{n,beta}`` over outcomes and ``w_n`` over states at step ``n``.

        Returns ``(w_nb, w_n, reward_occ_n, state_dist_n)`` where
        ``reward_occ_n[s, u] = sum_{k<n} gamma^k E[R_k 1[U_k=u] | s]`` and
        ``state_dist_n[s, s'] = P(S_n = s' | s)``.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        beta = self.gamma if beta is None else beta
        p_u, r_u = self.emission(encoding)
        D = self.step_distributions(n)
        S, A, U = self.mdp.num_states, self.mdp.num_actions, encoding.num_outcomes
        occ = np.zeros((S, A, U))
        rocc = np.zeros((S, U))
        for k in range(1, n):
            occ += beta ** k * (D[k - 1] @ p_u)
            rocc += self.gamma ** k * (np.einsum("sa,sat->st", self.probs, D[k - 1]) @ r_u)
        w_nb = coefficients_from_occurrences(occ, self.probs, encoding)
        dn = D[n - 1]
        w_n = coefficients_from_occurrences(dn, self.probs)
        dist_n = np.einsum("sa,sat->st", self.probs, dn)
        return w_nb, w_n, rocc, dist_n

    # gradients ----------------------------------------------------------

    def expected_gradient(self, advantages: np.ndarray, policy=None) -> np.ndarray:
        """``sum_s d(s) sum_a grad pi(a|s) A(s, a)``."""
        policy = policy if policy is not None else self.policy
        if policy is None:
            raise ValueError("a policy object is needed to map advantages to parameters")
        live = np.flatnonzero(np.arange(self.mdp.num_states) != self.mdp.absorbing_state)
        weights = self.visits[live, None] * np.asarray(advantages)[live]
        return policy.vjp(live, weights)

    def true_gradient(self, policy=None) -> np.ndarray:
        return self.expected_gradient(self.Q, policy)

    def ground_truth(self, policy=None) -> "GroundTruth":
        return GroundTruth(self.V, self.Q, self.true_gradient(policy), self.occupancy(), self.visits)


@dataclass
class GroundTruth:
    V: np.ndarray
    Q: np.ndarray
    grad: np.ndarray
    occupancy: np.ndarray
    visits: np.ndarray


def value_functions(mdp: TabularMDP, policy, T: int | None = None, gamma: float = 1.0) -> GroundTruth:
    o = Oracle(mdp, policy, gamma, T)
    grad = o.true_gradient() if o.policy is not None else np.zeros(0)
    return GroundTruth(o.V, o.Q, grad, o.occupancy(), o.visits)


def contribution_coefficients(mdp: TabularMDP, policy, encoding: OutcomeEncoding, T: int | None = None,
                              gamma: float = 1.0) -> CoefficientTable:
    return Oracle(mdp, policy, gamma, T).coefficients(encoding)


def state_visits(mdp: TabularMDP, probs: np.ndarray) -> np.ndarray:
    """Expected visits per state over the horizon by sparse forward propagation."""
    probs = as_probs(mdp, probs)
    d = np.zeros(mdp.num_states)
    d[mdp.start_state] = 1.0
    total = np.zeros(mdp.num_states)
    for _ in range(mdp.horizon):
        total += d
        flow = d[:, None, None] * probs[:, :, None] * mdp.next_probs
        d = np.bincount(mdp.next_states.ravel(), weights=flow.ravel(), minlength=mdp.num_states)
    total[mdp.absorbing_state] = 0.0
    return total


# ----------------------------------------------------------------------
# return distributions


@dataclass
class ReturnDistribution:
    """Exact distribution of the undiscounted return-to-go.

    ``by_action[s, a, k] = P(Z = support[k] | s, a)`` and
    ``by_state[s, k] = P(Z = support[k] | s)``.
    """

    support: np.ndarray
    by_action: np.ndarray
    by_state: np.ndarray
    index: dict = field(default_factory=dict)

    def hindsight(self, probs: np.ndarray) -> np.ndarray:
        """``p(a | s, z)``, shape (S, A, K); zero where ``p(z | s) = 0``."""
        num = probs[:, :, None] * self.by_action
        den = self.by_state[:, None, :]
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    def lookup(self, returns: np.ndarray) -> np.ndarray:
        """Support index of each return value (rounded); -1 when absent."""
        flat = np.round(np.asarray(returns, dtype=float), RETURN_DECIMALS).ravel()
        return np.array([self.index.get(float(z), -1) for z in flat], dtype=np.int64).reshape(np.shape(returns))


def rounded_returns(batch) -> np.ndarray:
    """Undiscounted returns-to-go rounded like the exact distribution."""
    Z = np.zeros_like(batch.rewards)
    acc = np.zeros(len(batch))
    for t in range(batch.max_length - 1, -1, -1):
        acc = np.where(batch.mask[:, t], np.round(batch.rewards[:, t] + acc, RETURN_DECIMALS), 0.0)
        Z[:, t] = acc
    return Z


def topological_order(mdp: TabularMDP) -> list[int]:
    """States ordered so successors come first; raises on cycles."""
    z = mdp.absorbing_state
    succ = [set() for _ in range(mdp.num_states)]
    for s in range(mdp.num_states):
        if s == z:
            continue
        live = mdp.next_probs[s] > 0
        succ[s] = set(int(x) for x in mdp.next_states[s][live]) - {z}
    state = np.zeros(mdp.num_states, dtype=np.int8)
    order: list[int] = []
    for root in range(mdp.num_states):
        if root == z or state[root]:
            continue
        stack = [(root, iter(sorted(succ[root])))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                state[node] = 2
                order.append(node)
            elif state[nxt] == 1:
                raise MDPStructureError(f"{mdp.name}: cyclic transitions, return distribution unsupported")
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(sorted(succ[nxt]))))
    return order


def return_distribution(mdp: TabularMDP, probs: np.ndarray) -> ReturnDistribution:
    probs = as_probs(mdp, probs)
    z = mdp.absorbing_state
    by_state: dict[int, dict[float, float]] = {z: {0.0: 1.0}}
    by_action: dict[tuple[int, int], dict[float, float]] = {}
    for s in topological_order(mdp):
        vs: dict[float, float] = {}
        for a in range(mdp.num_actions):
            q: dict[float, float] = {}
            for j in np.flatnonzero(mdp.reward_probs[s, a] > 0):
                r, pr = mdp.reward_values[s, a, j], mdp.reward_probs[s, a, j]
                for k in np.flatnonzero(mdp.next_probs[s, a] > 0):
                    s2, ps = mdp.next_states[s, a, k], mdp.next_probs[s, a, k]
                    for ret, pz in by_state[int(s2)].items():
                        key = float(np.round(r + ret, RETURN_DECIMALS))
                        q[key] = q.get(key, 0.0) + pr * ps * pz
            by_action[(s, a)] = q
            for key, p in q.items():
                vs[key] = vs.get(key, 0.0) + probs[s, a] * p
        by_state[s] = vs
    support = np.array(sorted({k for d in by_state.values() for k in d}))
    index = {float(v): i for i, v in enumerate(support)}
    S, A, K = mdp.num_states, mdp.num_actions, support.size
    ba = np.zeros((S, A, K))
    bs = np.zeros((S, K))
    for (s, a), d in by_action.items():
        for key, p in d.items():
            ba[s, a, index[key]] = p
    for s, d in by_state.items():
        for key, p in d.items():
            bs[s, index[key]] = p
    ba[z, :, index[0.0]] = 1.0
    return ReturnDistribution(support, ba, bs, index)


# ----------------------------------------------------------------------
# expected advantages per estimator


def expected_advantage(kind: str, oracle: Oracle, encoding: OutcomeEncoding | None = None,
                       models: dict | None = None) -> np.ndarray:
    """Per-(s, a) quantity whose ``grad pi``-weighted visit sum is the estimator's mean.

    ``models`` may override the DP models the estimator would otherwise use:
    ``coefficients`` (S, A, U), ``V`` (S,), ``Q`` (S, A), ``reward_model``
    (S, A), ``return_hindsight`` (S, A, K), ``n`` and the n-step tables.
    """
    m = models or {}
    o = oracle
    kind = kind.lower()
    if kind in ("reinforce", "trajcv"):
        # trajcv control variates cancel in expectation for any critic
        return o.Q
    if kind == "advantage":
        V = m.get("V", o.V)
        return o.Q - np.asarray(V)[:, None]
    if kind == "q-critic":
        Q = np.asarray(m.get("Q", o.Q))
        return Q - np.sum(o.probs * Q, axis=1, keepdims=True)
    if kind in ("cocoa", "cocoa-sampled", "hca-plus"):
        enc = state_encoding(o.mdp) if kind == "hca-plus" and encoding is None else encoding
        if enc is None:
            raise ValueError(f"{kind} needs an outcome encoding")
        w = np.asarray(m["coefficients"]) if "coefficients" in m else o.coefficients(enc).w
        occ = o.reward_occupancy(enc)
        return o.r - o.r_pi[:, None] + np.einsum("sau,su->sa", w, occ)
    if kind == "hca-reward-model":
        enc = encoding if encoding is not None else state_encoding(o.mdp)
        w = np.asarray(m["coefficients"]) if "coefficients" in m else o.coefficients(enc).w
        r_hat = np.asarray(m.get("reward_model", o.r))
        occ = o.reward_occupancy(enc)
        return r_hat + np.einsum("sau,su->sa", w + 1.0, occ)
    if kind in ("hca-return", "counterfactual-return"):
        dist = o.return_distribution()
        h = np.asarray(m.get("return_hindsight", dist.hindsight(o.probs)))
        z = dist.support[None, None, :]
        if kind == "hca-return":
            pos = dist.by_action > 0
            safe = np.where(pos & (h > 0), h, 1.0)
            ratio = np.where(pos, o.probs[:, :, None] / safe, 0.0)
            return np.sum(dist.by_action * (1.0 - ratio) * z, axis=2)
        ratio = h / np.maximum(o.probs[:, :, None], np.finfo(float).tiny)
        return np.sum(dist.by_state[:, None, :] * (ratio - 1.0) * z, axis=2)
    if kind == "cocoa-nstep":
        if encoding is None:
            raise ValueError("cocoa-nstep needs an outcome encoding")
        n = int(m["n"])
        w_nb, w_n, rocc, dist_n = o.nstep_tables(n, encoding)
        wnb = np.asarray(m.get("w_nb", w_nb.w))
        wn = np.asarray(m.get("w_n", w_n.w))
        V = np.asarray(m.get("V", o.V)).copy()
        V[o.mdp.absorbing_state] = 0.0
        boot = o.gamma ** n * np.einsum("sat,st,t->sa", wn, dist_n, V)
        return o.r - o.r_pi[:, None] + np.einsum("sau,su->sa", wnb, rocc) + boot
    raise ValueError(f"no expected form for estimator kind {kind!r}")


def expected_policy_gradient(advantages: np.ndarray, oracle: Oracle, policy=None) -> np.ndarray:
    return oracle.expected_gradient(advantages, policy)


# ----------------------------------------------------------------------
# occurrence gradient


@dataclass
class AlignmentReport:
    cosine: float
    dp_vector: np.ndarray
    fd_vector: np.ndarray
    occurrences: float
    zero_case: bool = False


def expected_occurrences(mdp: TabularMDP, probs: np.ndarray, encoding: OutcomeEncoding, u: int,
                         count_current: bool = False) -> np.ndarray:
    """``O(u, s)``: expected occurrences of ``u`` after ``s`` (``k >= 1``, or ``k >= 0``)."""
    o = Oracle(mdp, probs)
    occ = o.succ.M @ o.emission(encoding)[0]
    if count_current:
        occ = occ + o.emission_by_action(encoding)
    return np.einsum("sa,sa->s", o.probs, occ[:, :, u])


def occurrence_gradient_check(mdp: TabularMDP, policy, encoding: OutcomeEncoding, u: int,
                              state: int | None = None, step: float = 1e-5,
                              count_current: bool = False) -> AlignmentReport:
    """Compare the coefficient-weighted occurrence gradient with finite differences.

    The DP side is ``sum_s d(s) sum_a grad pi(a|s) w(s, a, u) O(u, s)`` over
    the visit distribution from ``state``. With ``count_current`` the
    occurrence count includes the outcome emitted at the current step and
    the coefficients are formed from that count.
    """
    s0 = mdp.start_state if state is None else state
    o = Oracle(mdp, policy)
    occ = o.succ.M @ o.emission(encoding)[0]
    if count_current:
        occ = occ + o.emission_by_action(encoding)
    coef = coefficients_from_occurrences(occ, o.probs)
    O = np.einsum("sa,sa->s", o.probs, occ[:, :, u])
    d = o.succ.N[s0].copy()
    d[s0] += 1.0
    d[mdp.absorbing_state] = 0.0
    live = np.flatnonzero(d > 0)
    weights = d[live, None] * coef.w[live, :, u] * O[live, None]
    dp_vec = policy.vjp(live, weights)

    base = policy.params.copy()
    fd = np.zeros_like(base)
    for i in range(base.size):
        hi, lo = base.copy(), base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = expected_occurrences(mdp, policy.with_params(hi).prob_table(mdp), encoding, u, count_current)[s0]
        f_lo = expected_occurrences(mdp, policy.with_params(lo).prob_table(mdp), encoding, u, count_current)[s0]
        fd[i] = (f_hi - f_lo) / (2 * step)
    n1, n2 = np.linalg.norm(dp_vec), np.linalg.norm(fd)
    if n1 < 1e-12 and n2 < 1e-12:
        return AlignmentReport(1.0, dp_vec, fd, float(O[s0]), zero_case=True)
    cos = float(dp_vec @ fd / max(n1 * n2, 1e-300))
    return AlignmentReport(cos, dp_vec, fd, float(O[s0]))
