"""Adam with classic coupled weight decay (decay term added to the gradient)."""

from __future__ import annotations

import numpy as np

from ..errors import StateError
from .params import ParamGroup


class AdamState:
    def __init__(
        self,
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: ParamGroup, state: AdamState) -> None:
    """Bias-corrected Adam update over every trainable param, then zero grads.

    Frozen params are never touched. A trainable param without a gradient
    buffer indicates a broken training loop and raises StateError.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        if not p.trainable:
            if p.tensor.grad is not None:
                p.tensor.grad = None
            continue
        g = p.tensor.grad
        if g is None:
            raise StateError(f"trainable parameter {p.name} has no gradient")
        if state.weight_decay:
            g = g + state.weight_decay * p.tensor.data
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.tensor.data)
            state.v[p.name] = np.zeros_like(p.tensor.data)
        m, v = state.m[p.name], state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.tensor.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.zero_grad()
