"""Core tape engine: forward values, backward accumulation, graph reuse."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepfusion import diffcore as dc
from sleepfusion.diffcore import Tensor
from sleepfusion.errors import DimensionError


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestForward:
    def test_add_broadcast(self):
        y = dc.add(Tensor(np.ones((2, 3))), Tensor(np.arange(3.0)))
        np.testing.assert_allclose(y.data, [[1, 2, 3], [1, 2, 3]])

    def test_matmul_batched(self):
        a = np.random.default_rng(0).standard_normal((4, 2, 3))
        b = np.random.default_rng(1).standard_normal((3, 5))
        y = dc.matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(y.data, a @ b, rtol=1e-6)

    def test_matmul_shape_error(self):
        with pytest.raises(DimensionError):
            dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_concat_and_getitem(self):
        a, b = Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 3)))
        y = dc.concat([a, b], axis=-1)
        assert y.shape == (2, 5)
        np.testing.assert_array_equal(y.data[:, :2], 1.0)
        row = y[0]
        assert row.shape == (5,)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            dc.mul(x, 2.0).backward()


class TestBackward:
    def test_mul_grads(self):
        x = t64([2.0, 3.0])
        y = t64([4.0, 5.0])
        x.requires_grad = y.requires_grad = True
        dc.sum_(dc.mul(x, y)).backward()
        np.testing.assert_allclose(x.grad, [4, 5])
        np.testing.assert_allclose(y.grad, [2, 3])

    def test_bias_broadcast_grad(self):
        b = t64(np.zeros(3))
        b.requires_grad = True
        dc.sum_(dc.add(Tensor(np.ones((4, 3), dtype=np.float64)), b)).backward()
        np.testing.assert_allclose(b.grad, [4, 4, 4])

    def test_same_tensor_used_twice(self):
        x = t64(np.ones(3))
        x.requires_grad = True
        dc.sum_(dc.add(x, x)).backward()
        np.testing.assert_allclose(x.grad, 2.0)

    def test_two_identical_subgraphs(self):
        # regression: pass-through gradients must not alias across branches
        x = t64(np.ones((2, 2)))
        x.requires_grad = True
        y1 = dc.add(x, x)
        y2 = dc.add(x, x)
        dc.sum_(dc.add(y1, dc.mul(y2, 2.0))).backward()
        np.testing.assert_allclose(x.grad, 6.0)

    def test_shared_intermediate(self):
        x = t64([1.0, 2.0])
        x.requires_grad = True
        h = dc.mul(x, x)
        dc.sum_(dc.add(h, dc.mul(h, 3.0))).backward()
        np.testing.assert_allclose(x.grad, 8.0 * x.data)

    def test_transpose_reshape_roundtrip_grad(self):
        x = t64(np.arange(24.0).reshape(2, 3, 4))
        x.requires_grad = True
        y = x.transpose(0, 2, 1).reshape(2, 12)
        dc.sum_(dc.mul(y, 2.0)).backward()
        np.testing.assert_allclose(x.grad, 2.0)

    def test_no_grad_blocks_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with dc.no_grad():
            y = dc.mul(x, 3.0)
        assert y._backward is None and not y.requires_grad


class TestDtype:
    def test_float32_default(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_graph_stays_float64(self):
        x = t64(np.ones((2, 2)))
        y = dc.tanh(dc.mul(x, 0.5))
        assert y.dtype == np.float64


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance(values, shift):
    x = np.array(values, dtype=np.float64)
    a = dc.softmax(Tensor(x), axis=-1).data
    b = dc.softmax(Tensor(x + shift), axis=-1).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert abs(a.sum() - 1.0) < 1e-9
