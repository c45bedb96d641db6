"""
Tests for nn_core - forward kernels, losses and their gradients.
"""

import math

from hypothesis import given, settings
from hypothesis import strategies as st
import numpy as np
import pytest

from imaginenet.errors import NumericError, ShapeMismatch, ValidationError
from imaginenet.nn_core import (
    ParamTensor,
    attention_backward,
    bce_loss,
    ce_loss,
    grad_check,
    init_linear,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    multi_margin_loss,
    positional_embedding,
    positional_embedding_backward,
    scaled_dot_attention,
    sigmoid,
    softmax_rows,
)
from imaginenet.selftest import margin_inputs


class TestLinear:
    """Test linear and linear_backward."""

    def test_batched_shapes(self, rng):
        """Test leading batch axes pass through."""
        W, b = init_linear(rng, "fc", 4, 3)
        y, cache = linear(rng.normal(size=(2, 5, 4)), W, b)
        assert y.shape == (2, 5, 3)
        dx = linear_backward(np.ones_like(y), cache)
        assert dx.shape == (2, 5, 4)
        assert W.grad.shape == (4, 3)
        np.testing.assert_allclose(b.grad, np.full((1, 3), 10.0))

    def test_init_bounds(self, rng):
        """Test uniform init within ±1/sqrt(fan_in)."""
        W, b = init_linear(rng, "fc", 16, 8)
        assert np.abs(W.value).max() <= 0.25
        assert np.abs(b.value).max() <= 0.25

    def test_shape_mismatch(self, rng):
        """Test the input width must match the weight."""
        W, b = init_linear(rng, "fc", 4, 3)
        with pytest.raises(ShapeMismatch):
            linear(np.zeros((2, 5)), W, b)

    def test_non_finite(self, rng):
        """Test NaN or Inf outputs raise NumericError."""
        W, b = init_linear(rng, "fc", 2, 2)
        with pytest.raises(NumericError):
            linear(np.array([[np.inf, 0.0]]), W, b)

    def test_gradient(self, rng):
        """Test analytic gradients against central differences."""
        x = rng.normal(size=(3, 4))
        W, b = init_linear(rng, "fc", 4, 2)
        R = rng.normal(size=(3, 2))
        _, cache = linear(x, W, b)
        dx = linear_backward(R, cache)

        def fn():
            return float((linear(x, W, b)[0] * R).sum())

        err = grad_check(fn, [x, W.value, b.value], [dx, W.grad, b.grad])
        assert err < 1e-6


class TestSoftmaxAndSigmoid:
    """Test softmax_rows and sigmoid."""

    @settings(max_examples=50)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
    def test_rows_sum_to_one(self, row):
        """Test every row is a probability distribution."""
        p = softmax_rows(np.array([row]))
        assert p.min() >= 0
        assert p.sum() == pytest.approx(1.0)

    def test_shift_invariance(self, rng):
        """Test adding a constant per row leaves the output unchanged."""
        x = rng.normal(size=(3, 5))
        np.testing.assert_allclose(softmax_rows(x), softmax_rows(x + 100.0))

    def test_sigmoid_extremes(self):
        """Test the logistic function saturates without overflow."""
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


class TestLayerNorm:
    """Test layer_norm."""

    def test_normalizes_rows(self, rng):
        """Test zero mean and unit variance with identity gain."""
        # var / (var + eps) is within 1e-6 of 1 once the row variance is well
        # above eps / 1e-6.
        x = rng.normal(loc=3.0, scale=50.0, size=(4, 10))
        gain = ParamTensor("g", np.ones(10))
        bias = ParamTensor("b", np.zeros(10))
        y, _ = layer_norm(x, gain, bias)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=0, atol=1e-6)

    def test_needs_two_columns(self):
        """Test a single column has no variance to normalize."""
        with pytest.raises(ValidationError):
            layer_norm(
                np.zeros((2, 1)),
                ParamTensor("g", np.ones(1)),
                ParamTensor("b", np.zeros(1)),
            )

    def test_gradient(self, rng):
        """Test analytic gradients against central differences."""
        x = rng.normal(scale=3.0, size=(2, 5))
        gain = ParamTensor("g", rng.normal(size=5))
        bias = ParamTensor("b", rng.normal(size=5))
        R = rng.normal(size=(2, 5))
        _, cache = layer_norm(x, gain, bias)
        dx = layer_norm_backward(R, cache)

        def fn():
            return float((layer_norm(x, gain, bias)[0] * R).sum())

        err = grad_check(fn, [x, gain.value, bias.value], [dx, gain.grad, bias.grad])
        assert err < 1e-5


class TestAttention:
    """Test scaled_dot_attention."""

    def test_convex_combination(self, rng):
        """Test every output row lies in the hull of the value rows."""
        Q, K = rng.normal(size=(5, 4)), rng.normal(size=(6, 4))
        V = rng.normal(size=(6, 3))
        out, cache = scaled_dot_attention(Q, K, V)
        A = cache[3]
        np.testing.assert_allclose(A.sum(axis=-1), 1.0)
        assert (A >= 0).all()
        assert (out <= V.max(axis=0) + 1e-12).all()
        assert (out >= V.min(axis=0) - 1e-12).all()

    def test_scale(self, rng):
        """Test logits are scaled by 1/sqrt(D)."""
        Q = K = np.eye(4)
        V = np.eye(4)
        out, _ = scaled_dot_attention(Q, K, V)
        e = math.exp(0.5)
        assert out[0, 0] == pytest.approx(e / (e + 3.0))

    def test_key_value_mismatch(self, rng):
        """Test K and V need the same number of rows."""
        with pytest.raises(ShapeMismatch):
            scaled_dot_attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((5, 3)))

    def test_gradient(self, rng):
        """Test analytic gradients against central differences."""
        Q, K, V = (rng.normal(size=(2, 3, 4)) for _ in range(3))
        R = rng.normal(size=(2, 3, 4))
        _, cache = scaled_dot_attention(Q, K, V)
        grads = attention_backward(R, cache)

        def fn():
            return float((scaled_dot_attention(Q, K, V)[0] * R).sum())

        assert grad_check(fn, [Q, K, V], list(grads)) < 1e-5


class TestPositionalEmbedding:
    """Test positional_embedding."""

    def test_enabled_and_disabled(self, rng):
        """Test the table is added only when enabled and gets batch-summed grads."""
        P = ParamTensor("pos", rng.normal(size=(3, 4)))
        x = rng.normal(size=(2, 3, 4))
        np.testing.assert_array_equal(positional_embedding(x, P, False), x)
        np.testing.assert_allclose(positional_embedding(x, P, True), x + P.value)
        positional_embedding_backward(np.ones((2, 3, 4)), P, True)
        np.testing.assert_allclose(P.grad, 2.0)
        P.zero_grad()
        positional_embedding_backward(np.ones((2, 3, 4)), P, False)
        assert not P.grad.any()


class TestLosses:
    """Test bce_loss, ce_loss and multi_margin_loss."""

    def test_bce_value(self):
        """Test BCE at zero logits is log 2."""
        loss, grad = bce_loss(np.zeros((2, 3)), np.array([[1, 0, 1], [0, 0, 1]]))
        assert loss == pytest.approx(math.log(2.0))
        assert grad[0, 0] == pytest.approx(-0.5 / 6)

    def test_bce_large_logits(self):
        """Test the log-sum-exp form stays finite for huge logits."""
        loss, _ = bce_loss(np.array([[1000.0, -1000.0]]), np.array([[0, 1]]))
        assert loss == pytest.approx(1000.0)

    def test_bce_rejects_soft_targets(self):
        """Test targets must be binary."""
        with pytest.raises(ValidationError):
            bce_loss(np.zeros((1, 2)), np.array([[0.5, 1.0]]))

    def test_ce_value(self):
        """Test CE against the closed form."""
        z = np.array([[2.0, 1.0, 0.0]])
        loss, _ = ce_loss(z, np.array([0]))
        expected = -2.0 + math.log(math.exp(2) + math.exp(1) + 1.0)
        assert loss == pytest.approx(expected)

    def test_ce_bad_index(self):
        """Test class indices outside 0..C-1 are rejected."""
        with pytest.raises(ValidationError):
            ce_loss(np.zeros((2, 3)), np.array([0, 3]))

    def test_margin_value(self):
        """Test the hinge average over the C - 1 wrong classes."""
        z = np.array([[1.0, 0.5, -2.0]])
        loss, grad = multi_margin_loss(z, np.array([0]))
        assert loss == pytest.approx((0.5 + 0.0) / 2)
        np.testing.assert_allclose(grad, [[-0.5, 0.5, 0.0]])

    def test_margin_zero_when_separated(self):
        """Test no loss once the true logit leads by the margin."""
        loss, grad = multi_margin_loss(np.array([[5.0, 0.0, 1.0]]), np.array([0]))
        assert loss == 0.0
        assert not grad.any()

    @pytest.mark.parametrize("loss_fn", [bce_loss, ce_loss, multi_margin_loss])
    def test_gradient(self, rng, loss_fn):
        """Test loss gradients against central differences."""
        if loss_fn is bce_loss:
            z = rng.normal(scale=2.0, size=(4, 5))
            target = rng.integers(0, 2, size=(4, 5))
        elif loss_fn is ce_loss:
            z = rng.normal(scale=2.0, size=(4, 5))
            target = rng.integers(0, 5, size=4)
        else:
            z, target = margin_inputs(rng)
        _, grad = loss_fn(z, target)
        assert grad_check(lambda: loss_fn(z, target)[0], [z], [grad]) < 1e-6


class TestGradCheck:
    """Test grad_check itself."""

    def test_detects_wrong_gradient(self, rng):
        """Test a wrong analytic gradient is flagged."""
        x = rng.normal(size=3)
        assert grad_check(lambda: float((x**2).sum()), [x], [x.copy()]) > 0.1

    def test_restores_arrays(self, rng):
        """Test perturbed arrays are restored."""
        x = rng.normal(size=(2, 2))
        before = x.copy()
        grad_check(lambda: float(x.sum()), [x], [np.ones_like(x)])
        np.testing.assert_array_equal(x, before)

    def test_mismatched_lists(self):
        """Test one gradient per array is required."""
        with pytest.raises(ValidationError):
            grad_check(lambda: 0.0, [np.zeros(1)], [])
