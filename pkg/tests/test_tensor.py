import zlib

import numpy as np
import pytest

from gebd import tensor as tc
from gebd.tensor import Parameter, Tensor

from conftest import numeric_grad, rel_error


def naive_matmul(a, b):
    M, K = a.shape
    N = b.shape[1]
    out = np.zeros((M, N))
    for i in range(M):
        for j in range(N):
            for k in range(K):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        out = tc.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_basis_selection(self):
        out = tc.matmul(Tensor([[1, 0]]), Tensor([[0], [5]]))
        np.testing.assert_array_equal(out.data, [[0]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(tc.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b),
                                   rtol=0, atol=1e-14)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            tc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(tc.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = tc.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)

    def test_against_formula(self):
        x = np.random.default_rng(1).normal(size=7)
        ref = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(tc.softmax(Tensor(x)).data, ref, rtol=0, atol=1e-12)

    def test_rows_sum_to_one(self):
        x = np.random.default_rng(2).normal(scale=5, size=(50, 13))
        out = tc.softmax(Tensor(x), axis=1).data
        assert np.all((out > 0) & (out < 1))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


class TestLayerNorm:
    ones, zeros = Tensor(np.ones(4)), Tensor(np.zeros(4))

    def test_constant_row(self):
        out = tc.layer_norm(Tensor(np.full(4, 3.0)), self.ones, self.zeros)
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_already_normalised(self):
        out = tc.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-10)

    def test_against_direct_formula(self):
        rng = np.random.default_rng(3)
        x, g, b = rng.normal(size=(5, 9)), rng.normal(size=9), rng.normal(size=9)
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        ref = (x - mu) / np.sqrt(var + 1e-5) * g + b
        np.testing.assert_allclose(tc.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, ref, atol=1e-12)

    def test_moments(self):
        x = np.random.default_rng(4).normal(loc=3, scale=2, size=(100, 16))
        out = tc.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=1e-9).data
        assert np.abs(out.mean(axis=1)).max() < 1e-6
        assert np.abs(out.var(axis=1) - 1).max() < 1e-4


class TestBackward:
    def test_linear_map_gradient_is_outer_product(self):
        W = Parameter(np.arange(6.0).reshape(2, 3))
        x = np.array([[1.0], [2.0], [-1.0]])
        tc.backward(tc.matmul(W, Tensor(x)).sum())
        np.testing.assert_array_equal(W.grad, np.outer(np.ones(2), x[:, 0]))

    def test_zero_weighted_term_contributes_nothing(self):
        rng = np.random.default_rng(5)
        W = Parameter(rng.normal(size=(3, 3)))
        V = Parameter(rng.normal(size=(3, 3)))
        loss = (W * W).sum() + tc.exp(V).sum() * 0.0
        tc.backward(loss)
        np.testing.assert_array_equal(V.grad, np.zeros((3, 3)))
        np.testing.assert_allclose(W.grad, 2 * W.data)

    def test_without_forward_rejected(self):
        with pytest.raises(RuntimeError, match="without a recorded forward"):
            tc.backward(Tensor(1.0))

    def test_second_backward_rejected(self):
        W = Parameter(np.ones(2))
        loss = (W * W).sum()
        tc.backward(loss)
        with pytest.raises(RuntimeError):
            tc.backward(loss)

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            tc.backward(Parameter(np.ones(3)) * 2.0)

    def test_no_grad_records_nothing(self):
        W = Parameter(np.ones(2))
        with tc.no_grad():
            out = (W * W).sum()
        assert not out.requires_grad

    def test_gradients_accumulate_across_uses(self):
        W = Parameter(np.array([2.0]))
        tc.backward((W * W + W * 3.0).sum())
        np.testing.assert_allclose(W.grad, [7.0])


# finite-difference sweep over every differentiable op -----------------------------

def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


OPS = {
    "add_broadcast": (lambda a, b: a + b, lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))]),
    "sub": (lambda a, b: a - b, lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
    "mul_broadcast": (lambda a, b: a * b, lambda r: [r.normal(size=(3, 1)), r.normal(size=(1, 4))]),
    "div": (lambda a, b: a / b, lambda r: [r.normal(size=(3,)), _pos(r, (3,))]),
    "power": (lambda a: a ** 3, lambda r: [r.normal(size=(4,))]),
    "exp": (tc.exp, lambda r: [r.normal(size=(5,))]),
    "log": (tc.log, lambda r: [_pos(r, (5,))]),
    "sqrt": (tc.sqrt, lambda r: [_pos(r, (5,))]),
    "tanh": (tc.tanh, lambda r: [r.normal(size=(5,))]),
    "sigmoid": (tc.sigmoid, lambda r: [r.normal(scale=3, size=(6,))]),
    "gelu": (tc.gelu, lambda r: [r.normal(size=(6,))]),
    "sum_axis": (lambda a: a.sum(axis=1), lambda r: [r.normal(size=(3, 4))]),
    "mean_keepdims": (lambda a: a.mean(axis=0, keepdims=True), lambda r: [r.normal(size=(3, 4))]),
    "reshape_transpose": (lambda a: a.reshape(4, 3).transpose(), lambda r: [r.normal(size=(3, 4))]),
    "take_repeated": (lambda a: a[np.array([0, 2, 2, 1])], lambda r: [r.normal(size=(3, 2))]),
    "concat": (lambda a, b: tc.concat([a, b], axis=1), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))]),
    "matmul_batched": (tc.matmul, lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
    "softmax": (lambda a: tc.softmax(a, axis=-1), lambda r: [r.normal(size=(3, 5))]),
    "layer_norm": (lambda x, g, b: tc.layer_norm(x, g, b),
                   lambda r: [r.normal(size=(3, 6)), r.normal(size=(6,)), r.normal(size=(6,))]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradient_matches_finite_differences(name):
    fn, make = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(100):
        arrays = make(rng)
        params = [Parameter(a.copy()) for a in arrays]
        out = fn(*params)
        weights = rng.normal(size=out.shape)
        tc.backward((out * weights).sum())

        def value():
            return float((fn(*[Tensor(p.data) for p in params]).data * weights).sum())

        for p in params:
            worst = max(worst, rel_error(p.grad, numeric_grad(value, p.data)))
    assert worst < 1e-4, f"{name}: relative error {worst:.2e}"


def test_clip_gradient_masks_outside():
    x = Parameter(np.array([-2.0, 0.5, 3.0]))
    tc.backward(tc.clip(x, 0.0, 1.0).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_ops_are_deterministic():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8,))
    run = lambda: tc.layer_norm(tc.softmax(Tensor(a) @ Tensor(a), -1), Tensor(b), Tensor(b)).data
    assert run().tobytes() == run().tobytes()


def test_dtype_is_global_setting():
    try:
        tc.set_dtype(np.float32)
        assert Tensor([1.0]).data.dtype == np.float32
    finally:
        tc.set_dtype(np.float64)
    assert Tensor([1.0]).data.dtype == np.float64
    with pytest.raises(ValueError):
        tc.set_dtype(np.int32)
