import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mirobid.diffcore import (
    MLP,
    CheckpointError,
    GaussianParams,
    GRUCell,
    ParamSet,
    Tensor,
    adaptive_update,
    clip_by_global_norm,
    finite_diff_check,
    forward_backward,
    gaussian_nll,
    kl_diag_gaussians,
    kl_monte_carlo,
    load_checkpoint,
    no_grad,
    reparam_sample,
    save_checkpoint,
    stop_gradient,
    unit_gaussian_nll,
)
from mirobid.diffcore import tensor as T
from mirobid.diffcore.checkpoint import from_bytes, to_bytes


def grads_and_check(build, params, inputs=None, wrt=(), tol=1e-4):
    inputs = inputs or {}
    _, g = forward_backward(build, inputs, params, wrt)

    def loss():
        with no_grad():
            return float(build(params.constants(), {k: Tensor(v) for k, v in inputs.items()}).data)

    arrays = {**params.values, **{k: inputs[k] for k in wrt}}
    return finite_diff_check(loss, arrays, g)


class TestTensor:
    def test_linear(self):
        P = ParamSet()
        P.add("w", 2.0)
        val, g = forward_backward(lambda P, X: P["w"] * X["x"], {"x": np.array(3.0)}, P, ("x",))
        assert val == 6.0 and g["w"] == 3.0 and g["x"] == 2.0

    def test_unused_parameter_zero_grad(self):
        P = ParamSet()
        P.add("w", 2.0)
        P.add("v", np.ones(3))
        _, g = forward_backward(lambda P, X: P["w"] * 2.0, {}, P)
        assert np.all(g["v"] == 0)

    def test_nonscalar_rejected(self):
        P = ParamSet()
        P.add("w", np.ones(2))
        with pytest.raises(ValueError):
            forward_backward(lambda P, X: P["w"] * 2.0, {}, P)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_stop_gradient(self):
        P = ParamSet()
        P.add("w", 1.5)
        _, g = forward_backward(lambda P, X: stop_gradient(P["w"]) * P["w"], {}, P)
        assert g["w"] == 1.5

    def test_elementwise_ops_gradients(self):
        rng = np.random.default_rng(0)
        P = ParamSet()
        P.add("a", rng.normal(size=(3, 4)))
        P.add("b", rng.uniform(0.5, 2.0, size=(4,)))

        def build(P, X):
            a, b = P["a"], P["b"]
            y = T.tanh(a) * b + T.sigmoid(a) / b - T.exp(a * 0.3) + T.log(b) + T.sqrt(b) * T.softplus(a)
            y = T.concat([y, T.relu(a + 0.1) ** 2], axis=-1)
            y = T.stack([y, y * 2.0], axis=0)
            return (T.clip(y, -3.0, 3.0) * y).mean() + y[1, :, 2:5].sum() + y.reshape(-1)[3] + (a.T @ a).sum()

        assert grads_and_check(build, P) <= 1e-4

    def test_two_layer_network(self):
        rng = np.random.default_rng(1)
        P = ParamSet()
        net = MLP(P, "net", [5, 16, 3], rng)
        x = rng.normal(size=(7, 5))
        assert grads_and_check(lambda P, X: (net(P, X["x"]) ** 2).sum(), P, {"x": x}, ("x",)) <= 1e-4

    def test_gru_gradients(self):
        rng = np.random.default_rng(2)
        P = ParamSet()
        cell = GRUCell(P, "gru", 3, 6, rng)
        xs = rng.normal(size=(2, 4, 3))

        def build(P, X):
            hs = cell.run(P, X["x"], reverse=False)
            hb = cell.run(P, X["x"], reverse=True)
            return sum(((h * h).sum() for h in hs), Tensor(0.0)) + hb[0].sum()

        assert grads_and_check(build, P, {"x": xs}, ("x",)) <= 1e-4

    def test_gru_causal(self):
        rng = np.random.default_rng(3)
        P = ParamSet()
        cell = GRUCell(P, "gru", 3, 4, rng)
        xs = rng.normal(size=(1, 5, 3))
        ys = xs.copy()
        ys[:, 3:] += 1.0
        a = cell.run(P.constants(), Tensor(xs))
        b = cell.run(P.constants(), Tensor(ys))
        for t in range(3):
            assert np.array_equal(a[t].data, b[t].data)


class TestGaussian:
    def g(self, m, s):
        return GaussianParams(np.atleast_1d(np.asarray(m, float)), np.log(np.atleast_1d(np.asarray(s, float))))

    def test_kl_self_zero(self):
        assert float(kl_diag_gaussians(self.g([1, 2], [0.5, 3]), self.g([1, 2], [0.5, 3])).data) == 0.0

    def test_kl_hand(self):
        assert float(kl_diag_gaussians(self.g(1, 1), self.g(0, 1)).data) == pytest.approx(0.5, abs=1e-15)

    def test_kl_asymmetric(self):
        a, b = self.g(0, 1), self.g(0, 2)
        kab = float(kl_diag_gaussians(a, b).data)
        kba = float(kl_diag_gaussians(b, a).data)
        # log 2 + 1/8 - 1/2 and -log 2 + 2 - 1/2
        assert kab == pytest.approx(np.log(2) - 0.375)
        assert kba == pytest.approx(1.5 - np.log(2))

    def test_kl_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kl_diag_gaussians(self.g([0, 0], [1, 1]), self.g(0, 1))

    @settings(max_examples=50)
    @given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
    def test_kl_nonnegative(self, mu, ls):
        p = GaussianParams(np.array(mu[:2]), np.array(ls[:2]))
        q = GaussianParams(np.array(mu[2:]), np.array(ls[2:]))
        assert float(kl_diag_gaussians(p, q).data) >= -1e-12

    def test_kl_matches_monte_carlo(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            mp, mq = rng.normal(size=3), rng.normal(size=3)
            lp, lq = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
            closed = float(kl_diag_gaussians(GaussianParams(mp, lp), GaussianParams(mq, lq)).data)
            est, se = kl_monte_carlo((mp, lp), (mq, lq), 20000, rng)
            assert abs(closed - est) <= 4 * se

    def test_log_std_clamped(self):
        g = GaussianParams(np.zeros(2), np.array([-50.0, 50.0]))
        assert np.allclose(g.std.data, [1e-4, 1e2])

    def test_reparam(self):
        g = self.g([1.0, -2.0], [0.5, 2.0])
        assert np.array_equal(reparam_sample(g, np.zeros(2)).data, [1.0, -2.0])
        tiny = GaussianParams(np.array([3.0]), np.array([-20.0]))
        assert reparam_sample(tiny, np.array([1.0])).data[0] == pytest.approx(3.0, abs=1e-3)
        rng = np.random.default_rng(5)
        s = reparam_sample(g, rng.standard_normal((100000, 2))).data
        se = np.array([0.5, 2.0]) / np.sqrt(100000)
        assert np.all(np.abs(s.mean(0) - [1.0, -2.0]) <= 4 * se)

    def test_nll_at_mean(self):
        assert float(gaussian_nll(np.zeros(1), self.g(0, 1)).data) == pytest.approx(0.5 * np.log(2 * np.pi))
        assert float(unit_gaussian_nll(np.ones(1), Tensor(np.ones(1))).data) == pytest.approx(0.5 * np.log(2 * np.pi))

    def test_gaussian_gradients(self):
        rng = np.random.default_rng(6)
        P = ParamSet()
        for k in ("m1", "l1", "m2", "l2"):
            P.add(k, rng.normal(size=3) * 0.5)
        x = rng.normal(size=3)
        noise = rng.normal(size=3)

        def build(P, X):
            p, q = GaussianParams(P["m1"], P["l1"]), GaussianParams(P["m2"], P["l2"])
            z = reparam_sample(p, X["noise"])
            return kl_diag_gaussians(p, q) + gaussian_nll(X["x"], q) + (z * z).sum()

        assert grads_and_check(build, P, {"x": x, "noise": noise}, ("x",)) <= 1e-4


class TestFiniteDiff:
    def test_linear_machine_precision(self):
        P = ParamSet()
        P.add("w", np.array([1.0, -2.0, 3.0]))
        c = np.array([0.5, 0.25, -1.0])
        assert grads_and_check(lambda P, X: (P["w"] * c).sum(), P) < 1e-8

    def test_broken_gradient_detected(self):
        w = np.array([1.0, 2.0])
        err = finite_diff_check(lambda: float((w**2).sum()), {"w": w}, {"w": 3.0 * w})
        assert err > 1e-2

    def test_second_order_convergence(self):
        w = np.array([0.7])
        exact = {"w": np.exp(w)}
        errs = []
        for h in (1e-2, 5e-3, 2.5e-3):
            errs.append(finite_diff_check(lambda: float(np.exp(w).sum()), {"w": w}, exact, step=h))
        slopes = np.diff(np.log(errs)) / np.diff(np.log([1e-2, 5e-3, 2.5e-3]))
        assert np.allclose(slopes, 2.0, atol=0.1)


class TestOptim:
    def test_zero_gradient_noop(self):
        P = ParamSet()
        P.add("w", np.ones(3))
        adaptive_update(P, {"w": np.zeros(3)}, 0.1)
        assert np.array_equal(P["w"], np.ones(3))

    def test_first_step_size_is_lr(self):
        P = ParamSet()
        P.add("w", np.zeros(3))
        adaptive_update(P, {"w": np.array([2.0, -0.5, 10.0])}, 0.01)
        assert np.allclose(P["w"], [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_deterministic(self):
        def run():
            P = ParamSet()
            P.add("w", np.ones(2))
            for i in range(5):
                adaptive_update(P, {"w": np.array([i, -i]) * 0.3 + P["w"]}, 0.05)
            return P["w"]

        assert np.array_equal(run(), run())

    def test_clip(self):
        g, n = clip_by_global_norm({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
        assert n == 5.0 and np.allclose(g["a"], 0.6) and np.allclose(g["b"], 0.8)


class TestParamsAndCheckpoint:
    def test_unique_names_and_fixed_shapes(self):
        P = ParamSet()
        P.add("w", np.ones(2))
        with pytest.raises(KeyError):
            P.add("w", np.ones(2))
        with pytest.raises(ValueError):
            P["w"] = np.ones(3)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        P = ParamSet()
        MLP(P, "m", [3, 4, 2], rng)
        blob = save_checkpoint(tmp_path / "c.ckpt", P, {"step": 3})
        Q, meta = load_checkpoint(tmp_path / "c.ckpt")
        assert meta == {"step": 3}
        assert to_bytes(Q, meta) == blob
        for k in P.names():
            assert np.array_equal(Q[k], P[k].astype(np.float32).astype(np.float64))

    def test_load_into_checks(self, tmp_path):
        rng = np.random.default_rng(8)
        P = ParamSet()
        MLP(P, "m", [3, 4, 2], rng)
        save_checkpoint(tmp_path / "c.ckpt", P)
        R = ParamSet()
        MLP(R, "m", [3, 5, 2], rng)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.ckpt", into=R)
        S = ParamSet()
        MLP(S, "other", [3, 4, 2], rng)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.ckpt", into=S)

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            from_bytes(b"NOTACKPT" + bytes(8))
