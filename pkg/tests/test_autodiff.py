"""Tests for the tensor core: forward values, invariants, gradient checks."""

import math

import numpy as np
import pytest

from composed_retrieval.autodiff import (
    Tensor,
    cosine_similarity,
    gelu,
    gradient_check,
    layer_norm,
    matmul,
    mean_pool,
    no_grad,
    scaled_dot_attention,
    sigmoid,
    softmax,
    stack,
)
from composed_retrieval.errors import DimensionError


class TestCosineSimilarity:
    def test_identical_vectors(self):
        c = cosine_similarity(Tensor([1.0, 2.0, 2.0]), Tensor([1.0, 2.0, 2.0]))
        assert abs(c.item() - 1.0) < 1e-9

    def test_orthogonal(self):
        c = cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]))
        assert c.item() == 0.0

    def test_hand_value(self):
        # dot = 2 + 2 + 4 = 8, |u| = |v| = 3, so 8/9
        c = cosine_similarity(Tensor([1.0, 2.0, 2.0]), Tensor([2.0, 1.0, 2.0]))
        assert abs(c.item() - 8.0 / 9.0) < 1e-9

    def test_zero_vector_convention(self):
        c = cosine_similarity(Tensor([0.0, 0.0]), Tensor([1.0, 1.0]))
        assert c.item() == 0.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_scale_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            u = rng.normal(size=6)
            v = rng.normal(size=6)
            a = rng.uniform(0.01, 100.0)
            c1 = cosine_similarity(Tensor(a * u), Tensor(v)).item()
            c2 = cosine_similarity(Tensor(u), Tensor(v)).item()
            assert abs(c1 - c2) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            u, v = rng.normal(size=5), rng.normal(size=5)
            assert cosine_similarity(Tensor(u), Tensor(v)).item() == pytest.approx(
                cosine_similarity(Tensor(v), Tensor(u)).item(), abs=1e-15
            )

    def test_range(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            u, v = rng.normal(size=4), rng.normal(size=4)
            c = cosine_similarity(Tensor(u), Tensor(v)).item()
            assert -1.0 <= c <= 1.0

    def test_broadcast_batch(self):
        rng = np.random.default_rng(14)
        q = rng.normal(size=(3, 1, 5))
        t = rng.normal(size=(1, 4, 5))
        c = cosine_similarity(Tensor(q), Tensor(t))
        assert c.shape == (3, 4)
        for i in range(3):
            for j in range(4):
                single = cosine_similarity(Tensor(q[i, 0]), Tensor(t[0, j])).item()
                assert c.data[i, j] == pytest.approx(single, abs=1e-15)

    def test_zero_vector_gradient_finite(self):
        u = Tensor([0.0, 0.0, 0.0], requires_grad=True)
        v = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        c = cosine_similarity(u, v)
        c.backward()
        assert np.isfinite(u.grad).all()
        assert np.isfinite(v.grad).all()


class TestMeanPool:
    def test_hand_mean(self):
        x = Tensor(np.array([[[1.0], [2.0]], [[3.0], [4.0]]]))  # 2x2x1
        assert mean_pool(x).item() == pytest.approx(2.5, abs=1e-15)

    def test_zeros(self):
        out = mean_pool(Tensor(np.zeros((3, 4, 5))))
        np.testing.assert_array_equal(out.data, np.zeros(5))

    def test_single_position_identity(self):
        v = np.array([1.5, -2.0, 0.25])
        out = mean_pool(Tensor(v.reshape(1, 1, 3)))
        np.testing.assert_array_equal(out.data, v)

    def test_empty_map_rejected(self):
        with pytest.raises(DimensionError):
            mean_pool(Tensor(np.zeros((0, 2, 3))))
        with pytest.raises(DimensionError):
            mean_pool(Tensor(np.zeros((2, 3))))

    def test_linearity(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(3, 2, 4))
        y = rng.normal(size=(3, 2, 4))
        a, b = 2.5, -1.25
        lhs = mean_pool(Tensor(a * x + b * y)).data
        rhs = a * mean_pool(Tensor(x)).data + b * mean_pool(Tensor(y)).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestScaledDotAttention:
    def test_single_key_returns_value_row(self):
        rng = np.random.default_rng(31)
        q = rng.normal(size=(4, 3))
        k = rng.normal(size=(1, 3))
        v = rng.normal(size=(1, 5))
        out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
        for row in out.data:
            np.testing.assert_allclose(row, v[0], atol=1e-12)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(32)
        q = rng.normal(size=(2, 3))
        k = np.tile(rng.normal(size=(1, 3)), (4, 1))
        v = rng.normal(size=(4, 5))
        out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
        for row in out.data:
            np.testing.assert_allclose(row, v.mean(axis=0), atol=1e-12)

    def test_hand_softmax(self):
        # logits (1/sqrt(2), 0); weights from an independent exp evaluation
        q = Tensor([[1.0, 0.0]])
        k = Tensor([[1.0, 0.0], [0.0, 1.0]])
        v = Tensor([[1.0, 0.0], [0.0, 1.0]])
        e = math.exp(1.0 / math.sqrt(2.0))
        w0 = e / (e + 1.0)
        out = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.data, [[w0, 1.0 - w0]], atol=1e-12)
        assert out.data[0, 0] == pytest.approx(0.6698, abs=1e-4)

    def test_output_rows_are_convex_combinations(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            q = rng.normal(size=(5, 4))
            k = rng.normal(size=(7, 4))
            v = rng.normal(size=(7, 3))
            out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
            lo, hi = v.min(axis=0), v.max(axis=0)
            assert (out >= lo - 1e-12).all()
            assert (out <= hi + 1e-12).all()

    def test_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            scaled_dot_attention(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros((4, 2)))
            )
        with pytest.raises(DimensionError):
            scaled_dot_attention(
                Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3))), Tensor(np.zeros((5, 2)))
            )


class TestGradientCheck:
    def test_square_function(self):
        x = Tensor([3.0], requires_grad=True)
        err = gradient_check(lambda: (x * x).sum(), [x])
        assert err < 1e-9

    def test_linear_function(self):
        a = np.array([2.0, -1.5, 0.5])
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        err = gradient_check(lambda: (x * a).sum(), [x])
        assert err < 1e-10

    def test_cosine_gradient(self):
        v_fixed = Tensor([2.0, 1.0, 2.0])
        u = Tensor([1.0, 2.0, 2.0], requires_grad=True)
        err = gradient_check(lambda: cosine_similarity(u, v_fixed), [u])
        assert err < 1e-6

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_function_rejected(self):
        from composed_retrieval.errors import NumericError

        x = Tensor([1e308], requires_grad=True)
        with pytest.raises(NumericError):
            gradient_check(lambda: (x * 1e308).sum(), [x])


def _check(f, params, tol=1e-4):
    err = gradient_check(f, params)
    assert err < tol, f"max relative gradient error {err}"


class TestOpGradients:
    """Every op used on the trainable path agrees with central differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(99)

    def _tensor(self, *shape):
        return Tensor(self.rng.normal(size=shape), requires_grad=True)

    def test_add_mul_div(self):
        a, b = self._tensor(3, 4), self._tensor(3, 4)
        c = self._tensor(4)  # broadcast operand
        _check(lambda: ((a + b) * c / (b * b + 4.0)).sum(), [a, b, c])

    def test_matmul(self):
        a, b = self._tensor(3, 4), self._tensor(4, 2)
        _check(lambda: matmul(a, b).sum(), [a, b])

    def test_matmul_batched(self):
        a, b = self._tensor(5, 3, 4), self._tensor(4, 2)
        _check(lambda: matmul(a, b).sum(), [a, b])

    def test_mean_and_sum_axes(self):
        a = self._tensor(4, 3, 2)
        _check(lambda: (a.mean(axis=-2, keepdims=True) * a).sum(), [a])

    def test_softmax(self):
        a = self._tensor(3, 5)
        w = self.rng.normal(size=(3, 5))
        _check(lambda: (softmax(a) * w).sum(), [a])

    def test_sigmoid(self):
        a = self._tensor(6)
        _check(lambda: (sigmoid(a) * np.arange(1.0, 7.0)).sum(), [a])

    def test_gelu(self):
        a = self._tensor(8)
        _check(lambda: (gelu(a) * np.arange(1.0, 9.0)).sum(), [a])

    def test_layer_norm(self):
        a = self._tensor(3, 6)
        gain = self._tensor(6)
        bias = self._tensor(6)
        w = self.rng.normal(size=(3, 6))
        _check(lambda: (layer_norm(a, gain, bias) * w).sum(), [a, gain, bias])

    def test_attention(self):
        q, k, v = self._tensor(3, 4), self._tensor(5, 4), self._tensor(5, 2)
        w = self.rng.normal(size=(3, 2))
        _check(lambda: (scaled_dot_attention(q, k, v) * w).sum(), [q, k, v])

    def test_mean_pool_gradient(self):
        x = self._tensor(2, 3, 4)
        w = self.rng.normal(size=4)
        _check(lambda: (mean_pool(x) * w).sum(), [x])

    def test_cosine_batched_gradient(self):
        u = self._tensor(2, 1, 5)
        v = self._tensor(1, 3, 5)
        _check(lambda: cosine_similarity(u, v).sum(), [u, v])

    def test_stack_gradient(self):
        parts = [self._tensor(2, 3) for _ in range(4)]
        w = self.rng.normal(size=(4, 2, 3))
        _check(lambda: (stack(parts) * w).sum(), parts)


class TestTensorBasics:
    def test_shape_data_consistency(self):
        t = Tensor(np.arange(12.0).reshape(3, 4))
        assert t.shape == (3, 4)
        assert int(np.prod(t.shape)) == t.size

    def test_grad_matches_shape(self):
        t = Tensor(np.ones((2, 3)), requires_grad=True)
        (t * 2.0).sum().backward()
        assert t.grad.shape == t.data.shape

    def test_gradient_accumulates(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        (t * 3.0).sum().backward()
        (t * 3.0).sum().backward()
        np.testing.assert_allclose(t.grad, [6.0, 6.0])
        t.zero_grad()
        assert t.grad is None

    def test_no_grad_blocks_tape(self):
        t = Tensor([1.0], requires_grad=True)
        with no_grad():
            out = (t * 2.0).sum()
        assert not out.requires_grad

    def test_forward_values_finite(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(scale=50.0, size=(4, 6)))
        for out in (softmax(x), sigmoid(x), gelu(x)):
            assert np.isfinite(out.data).all()

    def test_diamond_graph_gradient(self):
        # y = x*x + x*x must give dy/dx = 4x through shared subexpressions
        x = Tensor([2.0], requires_grad=True)
        sq = x * x
        (sq + sq).sum().backward()
        np.testing.assert_allclose(x.grad, [8.0])
