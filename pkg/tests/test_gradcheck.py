"""Finite-difference harness behavior plus the per-op gradient suite."""

import numpy as np
import pytest

from sleepfusion import diffcore as dc
from sleepfusion.diffcore import Tensor, grad_check
from sleepfusion.errors import EvaluationError, InputError
from sleepfusion.gradsuite import op_checks


def test_quadratic_is_exact():
    x = Tensor(np.array([3.0]))
    err = grad_check(lambda t: dc.sum_(dc.mul(t, t)), [x])
    assert err < 1e-8


def test_softmax_affine_composite():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3)))
    w = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal(4))
    r = Tensor(rng.standard_normal((2, 4)))

    def f(x, w, b):
        return dc.sum_(dc.mul(dc.softmax(dc.affine(x, w, b), axis=-1), r))

    assert grad_check(f, [x, w, b]) < 1e-6


def test_maxpool_away_from_ties():
    x = Tensor(np.array([[[0.1, 0.9, -0.4, 0.5, 1.3, -1.0, 0.2]]]))
    r = Tensor(np.array([[[2.0, -1.0, 0.5]]]))

    def f(x):
        return dc.sum_(dc.mul(dc.maxpool1d(x, 3, 2), r))

    assert grad_check(f, [x]) < 1e-6


def test_rejects_float32_inputs():
    x = Tensor(np.ones(2, dtype=np.float32))
    with pytest.raises(InputError):
        grad_check(lambda t: dc.sum_(t), [x])


def test_rejects_nonfinite_function():
    x = Tensor(np.array([0.0]))
    with pytest.raises(EvaluationError):
        grad_check(lambda t: dc.sum_(dc.div(t, t)), [x])  # 0/0


def test_sampled_coordinates_subset():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal(50))
    err = grad_check(lambda t: dc.sum_(dc.mul(dc.tanh(t), t)), [x], max_coords=5, rng=rng)
    assert err < 1e-7


def test_every_op_below_tolerance():
    for name, err, tol in op_checks():
        assert err <= tol, f"{name}: {err:.3e} > {tol}"
