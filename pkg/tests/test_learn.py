import warnings

import numpy as np
import pytest

from cocoa_lab.dp import Oracle, return_distribution
from cocoa_lab.encodings import reward_encoding, state_encoding
from cocoa_lab.envs import build_bit_reward, build_chain, build_coin_flip, build_tree, make_env
from cocoa_lab.envs.tree import TreeConfig
from cocoa_lab.learn import (
    FeatureCollisionWarning, FeatureConfig, HypernetHindsight, ReturnBins, SuccessorLearner, TabularContrastive,
    TabularHindsight, TabularReturnHindsight, TdCritic, coefficients_from_hindsight, hindsight_pairs,
    lambda_returns, reward_feature_pipeline, sr_coefficients,
)
from cocoa_lab.learn.successor import outcome_emission
from cocoa_lab.mdp import child_rng, sample_batch
from cocoa_lab.policy import TabularSoftmaxPolicy


@pytest.fixture(scope="module")
def tree_data():
    mdp = build_tree(TreeConfig(depth=3, num_actions=3))
    policy = TabularSoftmaxPolicy.for_mdp(mdp)
    oracle = Oracle(mdp, policy)
    batch = sample_batch(mdp, oracle.probs, 20_000, child_rng(0))
    return mdp, policy, oracle, batch


def live_reachable(mdp, coef):
    reach = coef.reachable.copy()
    reach[mdp.absorbing_state] = False
    return reach


class TestHindsightPairs:
    def test_pair_count_and_lag_weights(self):
        mdp = build_chain(3, rewards=[0, 0, 1])
        batch = sample_batch(mdp, np.ones((4, 1)), 2, child_rng(0))
        s, u, a, w = hindsight_pairs(batch, state_encoding(mdp), gamma=0.5)
        assert s.size == 2 * 3
        np.testing.assert_allclose(sorted(w), sorted([0.5, 0.5, 0.25] * 2))


class TestTabularHindsight:
    def test_counts_converge_to_dp(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        enc = reward_encoding(mdp)
        h = TabularHindsight(mdp.num_states, 3, enc)
        h.update(batch)
        learned, seen = h.table(oracle.probs)
        coef = oracle.coefficients(enc)
        reach = live_reachable(mdp, coef)
        assert np.all(seen[reach])
        tv = 0.5 * np.abs(learned - oracle.hindsight(enc)).sum(axis=1)
        assert tv[reach].max() < 0.05

    def test_ratio_mode_matches_counts_under_fixed_policy(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        enc = reward_encoding(mdp)
        a = TabularHindsight(mdp.num_states, 3, enc)
        b = TabularHindsight(mdp.num_states, 3, enc, conditioning="ratio")
        a.update(batch)
        b.update(batch, policy)
        # with a uniform behaviour policy the expected count is n(s, u) / A
        np.testing.assert_allclose(b.table(oracle.probs)[0], a.table(oracle.probs)[0], atol=1e-12)

    def test_ratio_tracks_a_new_policy(self):
        mdp2 = build_tree(TreeConfig(depth=2, num_actions=2))
        enc2 = state_encoding(mdp2)
        h = TabularHindsight(mdp2.num_states, 2, enc2, conditioning="ratio")
        p_old = np.full((mdp2.num_states, 2), 0.5)
        h.update(sample_batch(mdp2, p_old, 5000, child_rng(1)), p_old)
        p_new = p_old.copy()
        p_new[0] = [0.9, 0.1]
        learned = h.table(p_new)[0]
        exact = Oracle(mdp2, p_new).hindsight(enc2)
        reach = live_reachable(mdp2, Oracle(mdp2, p_new).coefficients(enc2))
        np.testing.assert_allclose(learned[0][:, reach[0]], exact[0][:, reach[0]], atol=0.03)

    def test_ratio_requires_policy_and_valid_args(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        with pytest.raises(ValueError):
            TabularHindsight(mdp.num_states, 3, reward_encoding(mdp), conditioning="ratio").update(batch.subset([0]))
        with pytest.raises(ValueError):
            TabularHindsight(2, 2, reward_encoding(mdp), conditioning="other")
        with pytest.raises(ValueError):
            TabularHindsight(2, 2, reward_encoding(mdp), prior=-1.0)

    def test_unseen_falls_back_to_policy(self):
        mdp = build_tree(TreeConfig(depth=2, num_actions=2))
        enc = state_encoding(mdp)
        h = TabularHindsight(mdp.num_states, 2, enc)
        probs = np.tile([0.3, 0.7], (mdp.num_states, 1))
        table, seen = h.table(probs)
        assert not seen.any()
        np.testing.assert_allclose(table[:, :, 0], probs)
        np.testing.assert_allclose(h.coefficients(probs).w, 0.0, atol=1e-12)

    def test_csv(self, tmp_path, tree_data):
        mdp, policy, oracle, batch = tree_data
        h = TabularHindsight(mdp.num_states, 3, reward_encoding(mdp))
        h.update(batch.subset(range(5)))
        h.to_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().startswith("s,u,a,count")

    def test_coefficients_from_hindsight(self):
        probs = np.array([[0.5, 0.5]])
        h = np.array([[[0.75], [0.25]]])
        np.testing.assert_allclose(coefficients_from_hindsight(h, probs).w[0, :, 0], [0.5, -0.5])


class TestContrastive:
    def test_ratio_matches_dp(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        enc = reward_encoding(mdp)
        c = TabularContrastive(mdp.num_states, 3, enc)
        c.accumulate(batch, policy)
        c.fit(2000)
        coef = oracle.coefficients(enc)
        reach = live_reachable(mdp, coef)
        diff = np.abs(c.coefficients().w - coef.w)
        assert np.transpose(diff, (0, 2, 1))[reach].max() < 0.1
        np.testing.assert_allclose(c.ratio(0, 1, 0), np.exp(c.scores[0, 1, 0]))


class TestSuccessor:
    def test_chain(self):
        mdp = build_chain(3)
        probs = np.ones((4, 1))
        sr = SuccessorLearner(4, 1, mdp.absorbing_state)
        sr.update_batch(sample_batch(mdp, probs, 200, child_rng(0)), probs)
        live = np.arange(4) != mdp.absorbing_state
        exact = Oracle(mdp, probs).succ.M
        np.testing.assert_allclose(sr.M[live][:, :, live], exact[live][:, :, live], atol=1e-3)

    def test_recombined_coefficients(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        probs = oracle.probs
        sr = SuccessorLearner(mdp.num_states, 3, mdp.absorbing_state, lr=0.05)
        for i in range(4):
            sr.update_batch(batch.subset(range(i * 5000, (i + 1) * 5000)), probs)
        enc = reward_encoding(mdp)
        coef = sr_coefficients(sr, outcome_emission(mdp, probs, enc), probs, enc)
        exact = oracle.coefficients(enc)
        reach = live_reachable(mdp, exact) & coef.reachable
        diff = np.transpose(np.abs(coef.w - exact.w), (0, 2, 1))[reach]
        assert diff.max() < 0.15


class TestCritics:
    def test_lambda_one_is_monte_carlo(self):
        R = np.array([[1.0, 2.0, 3.0]])
        mask = np.ones((1, 3), dtype=bool)
        G = lambda_returns(R, np.zeros((1, 3)), mask, 1.0, 1.0)
        np.testing.assert_allclose(G, [[6.0, 5.0, 3.0]])

    def test_lambda_zero_bootstraps(self):
        R = np.array([[1.0, 2.0]])
        boot = np.array([[10.0, 20.0]])
        G = lambda_returns(R, boot, np.ones((1, 2), dtype=bool), 0.0, 1.0)
        np.testing.assert_allclose(G, [[21.0, 2.0]])

    def test_tabular_value_converges(self):
        mdp = build_coin_flip()
        probs = np.ones((4, 1))
        critic = TdCritic(4, 1, "V", lam=1.0, absorbing_state=3)
        for i in range(40):
            critic.update(sample_batch(mdp, probs, 100, child_rng(i)))
        np.testing.assert_allclose(critic.table()[:3], [0.5, 1.0, 0.0], atol=0.05)

    def test_mlp_q_critic_learns_bandit(self):
        mdp = make_env("bandit")
        probs = np.full((2, 2), 0.5)
        critic = TdCritic(2, 2, "Q", lam=1.0, lr=0.01, backend="mlp", state_features=np.eye(2),
                          hidden=(16,), absorbing_state=1)
        for i in range(300):
            critic.update(sample_batch(mdp, probs, 16, child_rng(i)))
        np.testing.assert_allclose(critic.table()[0], [1.0, -2.0], atol=0.1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            TdCritic(2, 2, kind="A")
        with pytest.raises(ValueError):
            TdCritic(2, 2, lam=1.5)


class TestReturnModels:
    def test_exact_bins(self):
        bins = ReturnBins(np.array([0.0, 1.0, 1.0, -2.0]))
        assert bins.exact and bins.size == 3
        np.testing.assert_array_equal(bins(np.array([1.0, 5.0])), [2, -1])

    def test_coarse_bins(self):
        bins = ReturnBins(np.linspace(0, 1, 100), max_exact=10, num_bins=4)
        assert not bins.exact
        np.testing.assert_array_equal(bins(np.array([0.0, 0.3, 1.0])), [0, 1, 3])

    def test_tabular_return_hindsight_converges(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        dist = return_distribution(mdp, oracle.probs)
        model = TabularReturnHindsight(mdp.num_states, 3, ReturnBins(dist.support))
        model.update(batch)
        table, _ = model.model(oracle.probs)
        exact = dist.hindsight(oracle.probs)
        s0 = mdp.start_state
        live = dist.by_state[s0] > 0.01
        np.testing.assert_allclose(table[s0][:, live], exact[s0][:, live], atol=0.05)


class TestFeatures:
    def test_bit_reward_features_predict_reward(self):
        mdp = build_bit_reward()
        probs = np.full((mdp.num_states, 2), 0.5)
        buf = sample_batch(mdp, probs, 240, child_rng(0))
        with warnings.catch_warnings():
            warnings.simplefilter("error", FeatureCollisionWarning)
            res = reward_feature_pipeline(mdp, buf, FeatureConfig(steps=3000), child_rng(1))
        assert res.encoding.is_fully_predictive(mdp)
        assert res.collisions == []

    def test_preset_for_interleaving(self):
        cfg = FeatureConfig.for_env("interleaving-tiny", steps=5)
        assert cfg.batches == 90 and cfg.steps == 5


class TestHypernetHindsight:
    def test_loss_decreases(self, tree_data):
        mdp, policy, oracle, batch = tree_data
        enc = reward_encoding(mdp)
        model = HypernetHindsight(mdp.state_features, enc, 3, hidden=(32,), lr=3e-3, rng=child_rng(0))
        sub = batch.subset(range(256))
        first = model.update(sub, policy)
        for _ in range(100):
            last = model.update(sub, policy)
        assert last < first
        coef = model.coefficients(policy, mdp.num_states)
        assert coef.w.shape == (mdp.num_states, 3, enc.num_outcomes)
