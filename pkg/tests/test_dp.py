import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocoa_lab.dp import (
    Oracle, expected_advantage, occurrence_gradient_check, return_distribution, state_visits,
    successor_matrix, topological_order,
)
from cocoa_lab.encodings import reward_encoding, state_encoding
from cocoa_lab.envs import build_bit_reward, build_chain, build_coin_flip, build_tree, make_env
from cocoa_lab.envs.tree import TreeConfig
from cocoa_lab.mdp import StateSpaceTooLarge
from cocoa_lab.policy import TabularSoftmaxPolicy


def random_policy(mdp, seed):
    rng = np.random.default_rng(seed)
    return TabularSoftmaxPolicy(mdp.num_states, mdp.num_actions,
                                params=rng.normal(size=mdp.num_states * mdp.num_actions))


@pytest.fixture(scope="module")
def tree3():
    return build_tree(TreeConfig(depth=3, num_actions=3))


class TestSuccessor:
    def test_coin_flip_visit_probabilities(self):
        mdp = build_coin_flip()
        sm = successor_matrix(mdp, np.ones((4, 1)))
        np.testing.assert_allclose(sm.M[0, 0, [1, 2]], [0.5, 0.5])
        assert sm.M[0, 0, 0] == 0

    def test_chain_counts_each_later_state_once(self):
        mdp = build_chain(3)
        sm = successor_matrix(mdp, np.ones((4, 1)))
        np.testing.assert_array_equal(sm.M[0, 0, :3], [0, 1, 1])

    def test_discount_scales_by_lag(self):
        mdp = build_chain(3)
        sm = successor_matrix(mdp, np.ones((4, 1)), gamma=0.5)
        np.testing.assert_allclose(sm.M[0, 0, :3], [0, 0.5, 0.25])

    def test_cap(self, tree3):
        with pytest.raises(StateSpaceTooLarge):
            successor_matrix(tree3, np.full((tree3.num_states, 3), 1 / 3), cap=10)


class TestValues:
    def test_chain_values(self):
        mdp = build_chain(3, rewards=[1.0, 2.0, 3.0])
        o = Oracle(mdp, np.ones((4, 1)))
        np.testing.assert_allclose(o.V[:3], [6.0, 5.0, 3.0])

    def test_bandit_q(self):
        o = Oracle(make_env("bandit"), np.full((2, 2), 0.5))
        np.testing.assert_allclose(o.Q[0], [1.0, -2.0])
        assert o.V[0] == pytest.approx(-0.5)

    def test_true_gradient_matches_finite_differences(self, tree3):
        policy = random_policy(tree3, 3)
        grad = Oracle(tree3, policy).true_gradient(policy)
        s0 = tree3.start_state
        fd = np.zeros_like(grad)
        for i in range(policy.params.size):
            hi, lo = policy.params.copy(), policy.params.copy()
            hi[i] += 1e-6
            lo[i] -= 1e-6
            fd[i] = (Oracle(tree3, policy.with_params(hi)).V[s0] - Oracle(tree3, policy.with_params(lo)).V[s0]) / 2e-6
        np.testing.assert_allclose(grad, fd, atol=1e-7)

    def test_visits_match_forward_propagation(self, tree3):
        policy = random_policy(tree3, 4)
        o = Oracle(tree3, policy)
        np.testing.assert_allclose(state_visits(tree3, o.probs), o.visits, atol=1e-12)
        np.testing.assert_allclose(o.occupancy().sum(axis=0)[:-1], o.visits[:-1], atol=1e-12)


class TestCoefficients:
    @given(st.integers(0, 10_000))
    def test_policy_average_is_zero(self, seed):
        mdp = make_env("key-to-door", length=6)
        o = Oracle(mdp, random_policy(mdp, seed))
        coef = o.coefficients(reward_encoding(mdp))
        avg = np.einsum("sa,sau->su", o.probs, coef.w)
        np.testing.assert_allclose(avg[coef.reachable], 0.0, atol=1e-12)

    def test_hindsight_sums_to_one(self, tree3):
        o = Oracle(tree3, random_policy(tree3, 1))
        enc = state_encoding(tree3)
        coef = o.coefficients(enc)
        h = o.hindsight(enc)
        sums = h.sum(axis=1)
        np.testing.assert_allclose(sums[coef.reachable], 1.0, atol=1e-12)
        assert np.all(h >= -1e-15)

    def test_action_independent_dynamics_give_zero(self):
        mdp = build_bit_reward()
        o = Oracle(mdp, np.full((mdp.num_states, 2), 0.5))
        for enc in (reward_encoding(mdp), state_encoding(mdp)):
            np.testing.assert_allclose(o.coefficients(enc).w, 0.0, atol=1e-12)

    def test_csv_export(self, tree3, tmp_path):
        o = Oracle(tree3, random_policy(tree3, 1))
        coef = o.coefficients(reward_encoding(tree3))
        coef.to_csv(tmp_path / "w.csv")
        lines = (tmp_path / "w.csv").read_text().splitlines()
        assert lines[0] == "s,a,u,w"
        assert len(lines) - 1 == int(coef.reachable.sum()) * tree3.num_actions


class TestReturns:
    def test_distribution_normalized(self, tree3):
        o = Oracle(tree3, random_policy(tree3, 2))
        dist = return_distribution(tree3, o.probs)
        live = np.arange(tree3.num_states) != tree3.absorbing_state
        np.testing.assert_allclose(dist.by_action[live].sum(axis=2), 1.0, atol=1e-12)
        np.testing.assert_allclose(dist.by_action @ dist.support, o.Q, atol=1e-12)

    def test_topological_order_puts_successors_first(self, tree3):
        order = topological_order(tree3)
        pos = {s: i for i, s in enumerate(order)}
        for s in range(tree3.num_states):
            if s == tree3.absorbing_state:
                continue
            for t in tree3.next_states[s].ravel():
                if t != tree3.absorbing_state:
                    assert pos[int(t)] < pos[s]


class TestExpectedAdvantages:
    def test_nstep_full_horizon_equals_cocoa(self, tree3):
        o = Oracle(tree3, random_policy(tree3, 5))
        enc = reward_encoding(tree3)
        full = expected_advantage("cocoa", o, enc)
        nstep = expected_advantage("cocoa-nstep", o, enc, {"n": tree3.horizon})
        np.testing.assert_allclose(nstep, full, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2])
    def test_nstep_with_true_values_is_advantage(self, tree3, n):
        o = Oracle(tree3, random_policy(tree3, 6))
        adv = expected_advantage("cocoa-nstep", o, reward_encoding(tree3), {"n": n})
        live = np.arange(tree3.num_states) != tree3.absorbing_state
        np.testing.assert_allclose(adv[live], o.advantage[live], atol=1e-12)

    def test_unknown_kind(self, tree3):
        with pytest.raises(ValueError):
            expected_advantage("nope", Oracle(tree3, random_policy(tree3, 0)))


@pytest.fixture(scope="module")
def small():
    mdp = build_tree(TreeConfig(depth=2, num_actions=3))
    return mdp, random_policy(mdp, 0)


class TestOccurrenceGradient:
    def test_state_outcomes_align(self, small):
        mdp, policy = small
        enc = state_encoding(mdp)
        for u in range(enc.num_outcomes):
            rep = occurrence_gradient_check(mdp, policy, enc, u)
            if rep.occurrences > 0:
                assert rep.cosine >= 0.999

    def test_action_dependent_outcomes_align_when_current_step_counts(self, small):
        mdp, policy = small
        enc = reward_encoding(mdp)
        for u in range(enc.num_outcomes):
            assert occurrence_gradient_check(mdp, policy, enc, u, count_current=True).cosine >= 0.999

    def test_single_action_is_zero_case(self):
        mdp = build_chain(3, rewards=[0, 1, 0])
        policy = TabularSoftmaxPolicy(mdp.num_states, 1)
        rep = occurrence_gradient_check(mdp, policy, state_encoding(mdp), 2)
        assert rep.zero_case and rep.cosine == 1.0

    def test_bandit_direction_is_arm_probability_gradient(self):
        mdp = make_env("bandit")
        policy = TabularSoftmaxPolicy(2, 2, params=np.array([0.3, -0.2, 0.0, 0.0]))
        enc = reward_encoding(mdp)
        u = enc.labels.index(1.0)
        rep = occurrence_gradient_check(mdp, policy, enc, u, count_current=True)
        direction = policy.policy_grad(0, 0)
        cos = rep.fd_vector @ direction / np.linalg.norm(rep.fd_vector) / np.linalg.norm(direction)
        assert cos == pytest.approx(1.0, abs=1e-6)
