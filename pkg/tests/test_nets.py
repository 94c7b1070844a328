import math

import numpy as np
import pytest

from hopperflip.nets import (Adam, DualCritic, Estimator, GaussianPolicy, Mlp,
                             clip_grad_norm, orthogonal)


def fd_param_check(net, loss, eps=1e-6, probes=24):
    """Max relative error between analytic grads (provided by caller via a
    closure that refreshes them) and central finite differences."""
    worst = 0.0
    analytic = loss(want_grads=True)
    for arrs, grads in ((net.weights, analytic[0]), (net.biases, analytic[1])):
        for arr, grad in zip(arrs, grads):
            flat = arr.ravel()
            idx = np.linspace(0, flat.size - 1, min(probes, flat.size)).astype(int)
            for i in idx:
                old = flat[i]
                flat[i] = old + eps
                up = loss()
                flat[i] = old - eps
                dn = loss()
                flat[i] = old
                fd = (up - dn) / (2 * eps)
                worst = max(worst, abs(grad.ravel()[i] - fd) / max(1.0, abs(fd)))
    return worst


class TestMlp:
    def test_zero_params_zero_output(self):
        net = Mlp([4, 8, 3], np.random.default_rng(0))
        for w in net.weights:
            w[:] = 0.0
        y, _ = net.forward(np.random.default_rng(1).normal(size=(5, 4)))
        np.testing.assert_array_equal(y, 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        for sizes in ([5, 8, 7, 2], [6, 16, 1], [3, 4, 4, 4, 2]):
            net = Mlp(sizes, rng, out_gain=0.5)
            x = rng.normal(size=(4, sizes[0]))
            coef = rng.normal(size=(4, sizes[-1]))

            def loss(want_grads=False):
                y, cache = net.forward(x)
                if want_grads:
                    gw, gb, _ = net.backward(cache, coef)
                    return gw, gb
                return float((y * coef).sum())

            assert fd_param_check(net, loss) < 1e-4

    def test_input_gradient(self):
        rng = np.random.default_rng(3)
        net = Mlp([4, 6, 2], rng)
        x = rng.normal(size=(2, 4))
        coef = rng.normal(size=(2, 2))
        _, cache = net.forward(x)
        _, _, gx = net.backward(cache, coef)
        eps = 1e-6
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, i] += eps
            xm[0, i] -= eps
            fd = ((net.forward(xp)[0] * coef).sum() - (net.forward(xm)[0] * coef).sum()) / (2 * eps)
            assert gx[0, i] == pytest.approx(fd, abs=1e-6)

    def test_orthogonal_init_is_orthogonal(self):
        rng = np.random.default_rng(4)
        w = orthogonal(rng, 8, 16, gain=1.0)
        np.testing.assert_allclose(w @ w.T, np.eye(8), atol=1e-10)


class TestGaussianPolicy:
    def test_logprob_at_mode_is_normalizer(self):
        rng = np.random.default_rng(5)
        pi = GaussianPolicy(6, 3, (8,), rng, init_log_std=-0.3)
        obs = rng.normal(size=(2, 6))
        mean, _ = pi.forward(obs)
        logp = pi.log_prob(mean, mean)
        expected = -pi.log_std.sum() - 1.5 * math.log(2 * math.pi)
        np.testing.assert_allclose(logp, expected)

    def test_parameter_gradients_via_logprob(self):
        rng = np.random.default_rng(6)
        pi = GaussianPolicy(5, 3, (8, 6), rng)
        obs = rng.normal(size=(3, 5))
        actions = rng.normal(size=(3, 3))

        def loss(want_grads=False):
            mean, cache = pi.forward(obs)
            if want_grads:
                dmu, _ = pi.log_prob_grads(actions, mean)
                return pi.net.backward(cache, dmu)[:2]
            return float(pi.log_prob(actions, mean).sum())

        assert fd_param_check(pi.net, loss) < 1e-4

    def test_log_std_clamped(self):
        pi = GaussianPolicy(4, 3, (6,), np.random.default_rng(7))
        pi.log_std[:] = [5.0, -9.0, 0.0]
        pi.clamp_log_std()
        np.testing.assert_allclose(pi.log_std, [1.0, -4.0, 0.0])

    def test_wrong_input_size_rejected(self):
        pi = GaussianPolicy(4, 3, (6,), np.random.default_rng(8))
        with pytest.raises(ValueError):
            pi.forward(np.zeros((1, 5)))

    def test_nonfinite_params_rejected(self):
        pi = GaussianPolicy(4, 3, (6,), np.random.default_rng(9))
        pi.net.weights[0][0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            pi.forward(np.zeros((1, 4)))

    def test_entropy_formula(self):
        pi = GaussianPolicy(4, 3, (6,), np.random.default_rng(10))
        pi.log_std[:] = 0.0
        assert pi.entropy() == pytest.approx(1.5 * (1 + math.log(2 * math.pi)))


class TestDualCritic:
    def test_heads_have_disjoint_parameters(self):
        rng = np.random.default_rng(11)
        critic = DualCritic(7, (8, 6), rng)
        obs = rng.normal(size=(4, 7))
        vm0, vb0, _ = critic.forward(obs)
        critic.barrier.weights[0] += 0.5  # perturb head 2 only
        vm1, vb1, _ = critic.forward(obs)
        np.testing.assert_array_equal(vm0, vm1)
        assert np.abs(vb0 - vb1).max() > 0.0

    def test_zero_output_layers_give_zero_values(self):
        rng = np.random.default_rng(12)
        critic = DualCritic(7, (8, 6), rng)
        for tower in (critic.motion, critic.barrier):
            tower.weights[-1][:] = 0.0
            tower.biases[-1][:] = 0.0
        vm, vb, _ = critic.forward(rng.normal(size=(3, 7)))
        np.testing.assert_array_equal(vm, 0.0)
        np.testing.assert_array_equal(vb, 0.0)

    def test_gradients(self):
        rng = np.random.default_rng(13)
        critic = DualCritic(5, (8,), rng)
        obs = rng.normal(size=(4, 5))
        target = rng.normal(size=4)

        def loss(want_grads=False):
            vm, vb, (cm, cb) = critic.forward(obs)
            if want_grads:
                return critic.motion.backward(cm, ((vm - target) / 4)[:, None])[:2]
            return float(0.5 * ((vm - target) ** 2).mean())

        assert fd_param_check(critic.motion, loss) < 1e-4


class TestEstimator:
    def test_shapes(self):
        est = Estimator(38, 3, (16, 8), np.random.default_rng(14))
        out = est.predict(np.zeros((5, 38)))
        assert out.shape == (5, 3)


class TestAdam:
    def test_descends_quadratic(self):
        params = {"x": np.array([5.0, -3.0])}
        opt = Adam(params, lr=0.1)
        for _ in range(500):
            opt.step({"x": 2.0 * params["x"]})
        assert np.abs(params["x"]).max() < 1e-3

    def test_zero_gradient_is_a_fixed_point(self):
        params = {"x": np.array([1.0, 2.0])}
        opt = Adam(params, lr=0.1)
        opt.step({"x": np.zeros(2)})
        np.testing.assert_array_equal(params["x"], [1.0, 2.0])


def test_clip_grad_norm():
    grads = {"a": np.array([3.0, 4.0])}
    norm = clip_grad_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(grads["a"]) == pytest.approx(1.0)
    grads = {"a": np.array([0.3, 0.4])}
    clip_grad_norm(grads, 1.0)
    np.testing.assert_allclose(grads["a"], [0.3, 0.4])
