import numpy as np
import pytest

from cocoa_lab.funcapprox import (
    AdamW, HindsightHyperNet, MaskedRewardModel, Mlp, NonFiniteGradientError, finite_difference_check,
    load_checkpoint, log_softmax, relu_g, save_checkpoint, softmax, truncated_normal,
)

COORDS = 50
STEP = 1e-5
TOL = 1e-4


def coords(rng, n):
    return rng.choice(n, size=min(COORDS, n), replace=False)


class TestMlp:
    def test_parameter_gradient(self, rng):
        net = Mlp([5, 16, 16, 3])
        p = net.init(rng)
        x = rng.normal(size=(7, 5))
        up = rng.normal(size=(7, 3))
        out, cache = net.forward(p, x)
        grad, _ = net.backward(p, cache, up)
        err = finite_difference_check(lambda q: float(np.sum(net(q, x) * up)), p, grad, coords(rng, p.size), STEP)
        assert err < TOL

    def test_input_gradient(self, rng):
        net = Mlp([4, 8, 2])
        p = net.init(rng)
        x = rng.normal(size=(1, 4))
        up = rng.normal(size=(1, 2))
        _, cache = net.forward(p, x)
        _, dx = net.backward(p, cache, up)
        err = finite_difference_check(lambda z: float(np.sum(net(p, z[None]) * up)), x[0], dx[0], range(4), STEP)
        assert err < TOL

    def test_shape_errors(self, rng):
        net = Mlp([3, 2])
        with pytest.raises(ValueError):
            net.forward(net.init(rng), np.zeros((1, 4)))
        with pytest.raises(ValueError):
            net.forward(np.zeros(3), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            Mlp([3])


class TestHyperNet:
    @pytest.mark.parametrize("complement", [False, True])
    def test_loss_gradient(self, rng, complement):
        net = HindsightHyperNet(4, 3, 3, hidden=(16,), complement=complement)
        p = net.init(rng)
        n = 12
        xs, xu, lg = rng.normal(size=(n, 4)), rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        labels = rng.integers(0, 3, size=n)
        w = rng.random(n)
        _, grad = net.loss_and_grad(p, xs, xu, lg, labels, w)
        f = lambda q: net.loss_and_grad(q, xs, xu, lg, labels, w)[0]
        assert finite_difference_check(f, p, grad, coords(rng, p.size), STEP) < TOL

    def test_probabilities_normalized(self, rng):
        net = HindsightHyperNet(2, 2, 4)
        p = net.init(rng)
        pr = net.probs(p, rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=(3, 4)))
        np.testing.assert_allclose(pr.sum(axis=1), 1.0)

    def test_gated_rectifier(self):
        np.testing.assert_array_equal(relu_g(np.array([2.0, 0.0, 0.5, 3.0])), [1.5, -3.0])
        with pytest.raises(ValueError):
            relu_g(np.zeros(3))


class TestMaskedRewardModel:
    def test_true_gradient_coordinates(self, rng):
        model = MaskedRewardModel(6, 3)
        p = model.init(rng) + rng.normal(scale=0.3, size=model.num_params)
        x = rng.normal(size=(20, 6))
        acts = rng.integers(0, 3, size=20)
        r = rng.normal(size=20)
        _, grad = model.loss_and_grad(p, x, acts, r)
        mask, _ = model.split(p)
        # mask entries whose pre-activation is ever negative use the surrogate
        pre = mask[acts] ** 2 * x
        surrogate = np.zeros((3, 6), dtype=bool)
        for a in range(3):
            surrogate[a] = np.any(pre[acts == a] < 0, axis=0)
        exact = np.concatenate([np.flatnonzero(~surrogate.ravel()), 18 + np.arange(6)])
        f = lambda q: model.loss_and_grad(q, x, acts, r)[0]
        assert finite_difference_check(f, p, grad, exact, STEP) < TOL

    def test_nonnegative_inputs_have_no_surrogate_coordinates(self, rng):
        model = MaskedRewardModel(5, 2)
        p = model.init(rng) + rng.normal(scale=0.3, size=model.num_params)
        x = rng.random((15, 5)) + 0.1
        acts = rng.integers(0, 2, size=15)
        r = rng.normal(size=15)
        _, grad = model.loss_and_grad(p, x, acts, r)
        f = lambda q: model.loss_and_grad(q, x, acts, r)[0]
        assert finite_difference_check(f, p, grad, range(p.size), STEP) < TOL

    def test_penalty_gradient(self, rng):
        model = MaskedRewardModel(4, 2)
        p = rng.normal(size=model.num_params)
        _, grad = model.penalty_and_grad(p, 0.1, 0.2)
        f = lambda q: model.penalty_and_grad(q, 0.1, 0.2)[0]
        assert finite_difference_check(f, p, grad, range(p.size), STEP) < TOL

    def test_feature_codes(self, rng):
        model = MaskedRewardModel(3, 1)
        p = np.array([1.0, 0.0, 1.0, 1.0, 1.0, 1.0])
        codes = model.features(p, np.array([[1.0, 1.0, 0.01]]), np.array([0]))
        np.testing.assert_array_equal(codes, [[True, False, False]])


class TestSoftmax:
    def test_stability(self):
        z = np.array([[1000.0, 1000.0, -1000.0]])
        np.testing.assert_allclose(softmax(z), [[0.5, 0.5, 0.0]])
        np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z))

    def test_truncated_normal_bounds(self, rng):
        x = truncated_normal(rng, 10_000, 0.5)
        assert np.all(np.abs(x) <= 1.0)


class TestAdamW:
    def test_minimizes_quadratic(self):
        opt = AdamW(lr=0.1)
        p = np.array([3.0, -2.0])
        for _ in range(500):
            p = opt.step(p, 2 * p)
        np.testing.assert_allclose(p, 0.0, atol=1e-2)

    def test_first_step_moves_by_lr(self):
        p = AdamW(lr=0.01).step(np.array([1.0, 1.0]), np.array([5.0, -0.1]))
        np.testing.assert_allclose(p, [0.99, 1.01], rtol=1e-6)

    def test_decays(self):
        p = AdamW(lr=0.1, weight_decay=0.5).step(np.array([2.0]), np.array([0.0]))
        np.testing.assert_allclose(p, [2.0 * 0.95])
        p = AdamW(lr=0.1, l1_decay=1.0).step(np.array([2.0]), np.array([0.0]))
        np.testing.assert_allclose(p, [1.9])

    def test_clipping(self):
        a = AdamW(lr=0.1, clip_norm=1.0)
        a.step(np.zeros(2), np.array([30.0, 40.0]))
        np.testing.assert_allclose(a.m, 0.1 * np.array([0.6, 0.8]))

    def test_non_finite(self):
        with pytest.raises(NonFiniteGradientError):
            AdamW().step(np.zeros(2), np.array([np.nan, 0.0]))


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        arrays = {"w": rng.normal(size=(3, 4)), "b": np.arange(5)}
        save_checkpoint(tmp_path / "ck", arrays, {"step": 7})
        loaded, meta = load_checkpoint(tmp_path / "ck")
        assert meta == {"step": 7}
        for k, v in arrays.items():
            np.testing.assert_array_equal(loaded[k], v)
