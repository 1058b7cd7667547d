"""Central finite-difference verification of the analytic gradients.

Intended to run with float64 tensors and deterministic functions (dropout
off, fixed masks). Relative error per coordinate is
|analytic - numeric| / max(1e-8, |analytic| + |numeric|).
"""

from __future__ import annotations

import numpy as np

from ..errors import EvaluationError, InputError
from .tensor import Tensor


def _eval_scalar(f, inputs) -> float:
    out = f(*inputs)
    val = float(out.data)
    if not np.isfinite(val):
        raise EvaluationError("grad_check: function value is not finite")
    return val


def grad_check(
    f,
    inputs: list[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps the given tensors to a scalar Tensor. When ``max_coords`` is set,
    only that many randomly chosen coordinates per input are probed, which
    keeps large compositions affordable.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise InputError("grad_check requires float64 inputs")
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise InputError("grad_check: function must return a scalar")
    if not np.isfinite(out.data).all():
        raise EvaluationError("grad_check: function value is not finite")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        ana_flat = ana.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = _eval_scalar(f, inputs)
            flat[i] = orig - step
            f_minus = _eval_scalar(f, inputs)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = ana_flat[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst
