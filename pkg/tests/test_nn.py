"""Tests for activations, dense layers, AdamW and the gradient oracle."""

import numpy as np
import pytest

import dorakit as dk
from dorakit.nn import max_relative_error

from .conftest import rel_error


class TestActivations:
    def test_mish_values(self):
        assert dk.mish(0.0) == 0.0
        assert float(dk.mish(1.0)) == pytest.approx(0.8650983882673103, abs=1e-12)
        assert float(dk.mish(-1.0)) == pytest.approx(-0.30340146137410895, abs=1e-12)

    def test_mish_large_inputs(self):
        x = np.array([-1000.0, -50.0, 50.0, 1000.0])
        y = dk.mish(x)
        assert np.isfinite(y).all()
        assert y[-1] == pytest.approx(1000.0)
        assert abs(y[0]) < 1e-12

    def test_softplus_no_overflow(self):
        assert float(dk.softplus(800.0)) == pytest.approx(800.0)
        assert float(dk.softplus(-800.0)) == 0.0

    def test_mish_grad_matches_finite_difference(self):
        x = np.linspace(-6.0, 6.0, 49)
        h = 1e-6
        numeric = (dk.mish(x + h) - dk.mish(x - h)) / (2 * h)
        np.testing.assert_allclose(dk.mish_grad(x), numeric, rtol=1e-6, atol=1e-8)

    def test_softmax_rows_sum_to_one(self):
        logits = np.array([[1000.0, 0.0, -1000.0], [1.0, 2.0, 3.0]])
        probs = dk.softmax(logits)
        assert np.isfinite(probs).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        assert probs[0, 0] == pytest.approx(1.0)

    def test_softmax_example(self):
        probs = dk.softmax(np.array([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(probs, [[2 / 3, 1 / 3]], rtol=1e-12)


class TestMlp:
    def test_create_dims(self):
        net = dk.Mlp.create([5, 8, 3], np.random.default_rng(0))
        assert net.in_dim == 5
        assert net.out_dim == 3
        assert [layer.activation for layer in net.layers] == ["mish", "identity"]

    def test_dims_must_chain(self):
        rng = np.random.default_rng(0)
        a = dk.DenseLayer.glorot(4, 3, rng)
        b = dk.DenseLayer.glorot(5, 2, rng)
        with pytest.raises(ValueError):
            dk.Mlp([a, b])

    def test_input_width_checked(self):
        net = dk.Mlp.create([3, 2], np.random.default_rng(0))
        with pytest.raises(ValueError):
            dk.mlp_forward(net, np.zeros((4, 5)))

    def test_zero_weights_give_activated_bias(self):
        b = np.array([-1.0, 0.0, 0.5, 2.0])
        layer = dk.DenseLayer(np.zeros((4, 3)), b.copy(), "mish")
        out, _ = dk.mlp_forward(dk.Mlp([layer]), np.random.default_rng(0).standard_normal((5, 3)))
        np.testing.assert_allclose(out, np.tile(dk.mish(b), (5, 1)))

    def test_tape_used_once(self):
        net = dk.Mlp.create([3, 2], np.random.default_rng(0))
        out, tape = dk.mlp_forward(net, np.ones((2, 3)))
        dk.mlp_backward(net, tape, np.ones_like(out))
        with pytest.raises(RuntimeError):
            dk.mlp_backward(net, tape, np.ones_like(out))

    def test_backward_matches_oracle(self):
        rng = np.random.default_rng(1)
        net = dk.Mlp.create([4, 6, 5, 2], rng, final_activation="mish")
        x = rng.standard_normal((7, 4))
        target = rng.standard_normal((7, 2))
        params = net.parameters("net")

        def loss():
            out, _ = dk.mlp_forward(net, x)
            return float(((out - target) ** 2).sum())

        out, tape = dk.mlp_forward(net, x)
        grads, grad_x = dk.mlp_backward(net, tape, 2 * (out - target))
        numeric = dk.numerical_gradient(loss, params, h=dk.nn.FD_STEP)
        for i, g in enumerate(grads):
            assert rel_error(g.weight, numeric[f"net.{i}.weight"]) < 1e-4
            assert rel_error(g.bias, numeric[f"net.{i}.bias"]) < 1e-4
        assert grad_x.shape == x.shape


class TestAdamW:
    def test_single_step_by_hand(self):
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.1, -0.3, 0.0])
        state = dk.AdamWState(lr=0.01, weight_decay=0.1)
        expected = p.copy()
        m = 0.1 * g
        v = 0.001 * g * g
        m_hat = m / (1 - 0.9)
        v_hat = v / (1 - 0.999)
        expected = expected - 0.01 * m_hat / (np.sqrt(v_hat) + 1e-8) - 0.01 * 0.1 * p
        params = {"w": p}
        dk.adamw_step(params, {"w": g}, state)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-12)
        assert state.t == 1

    def test_two_steps_by_hand(self):
        p = np.array([0.3])
        grads = [np.array([0.2]), np.array([-0.5])]
        lr, wd, b1, b2, eps = 0.05, 0.01, 0.9, 0.999, 1e-8
        expected = p.copy()
        m = v = np.zeros(1)
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            step = (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            expected = expected - lr * step - lr * wd * expected
        params = {"w": p}
        state = dk.AdamWState(lr=lr, weight_decay=wd)
        for g in grads:
            dk.adamw_step(params, {"w": g}, state)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-12)

    def test_updates_in_place(self):
        p = np.ones(2)
        params = {"w": p}
        dk.adamw_step(params, {"w": np.ones(2)}, dk.AdamWState())
        assert params["w"] is p
        assert (p < 1.0).all()

    def test_parameters_without_gradient_untouched(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = dk.AdamWState()
        dk.adamw_step(params, {"a": np.ones(2)}, state)
        np.testing.assert_array_equal(params["b"], 1.0)
        assert "b" not in state.m

    def test_non_finite_gradient(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        bad = np.array([np.nan, 0.0])
        with pytest.raises(dk.NumericalError) as info:
            dk.adamw_step(params, {"a": np.ones(2), "b": bad}, dk.AdamWState())
        assert info.value.diagnostics["parameter"] == "b"
        np.testing.assert_array_equal(params["a"], 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dk.adamw_step({"a": np.ones(2)}, {"a": np.ones(3)}, dk.AdamWState())

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            dk.AdamWState(beta1=1.0)
        with pytest.raises(ValueError):
            dk.AdamWState(lr=-1.0)


class TestGradientOracle:
    def test_quadratic(self):
        w = np.array([1.0, -2.0, 3.0])

        def loss():
            return float((w**2).sum())

        numeric = dk.numerical_gradient(loss, {"w": w})
        np.testing.assert_allclose(numeric["w"], 2 * np.array([1.0, -2.0, 3.0]), rtol=1e-8)
        np.testing.assert_array_equal(w, [1.0, -2.0, 3.0])

    def test_max_coords_leaves_nan(self):
        w = np.zeros(10)
        numeric = dk.numerical_gradient(lambda: float(w.sum()), {"w": w}, max_coords=3)
        assert np.isnan(numeric["w"]).sum() == 7
        assert max_relative_error(np.ones(10), numeric["w"]) < 1e-8
