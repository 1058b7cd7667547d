"""Differentiable network ops built on the Tensor tape.

Convolution uses cross-correlation semantics (no kernel flip). Pooling
gradients route to the first maximum inside each window. Dropout uses
inverted scaling so evaluation mode is a plain pass-through.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, InputError
from .tensor import Tensor, _make, as_tensor, _unbroadcast


def affine(x, w, b) -> Tensor:
    """y = x @ w + b over the trailing axis, broadcasting leading dims."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: trailing dim {x.shape[-1]} != {w.shape[0]}")
    data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data.T, own=True)
        if w.requires_grad:
            xf = x.data.reshape(-1, x.shape[-1])
            gf = g.reshape(-1, g.shape[-1])
            w.accumulate_grad(xf.T @ gf, own=True)
        if b.requires_grad:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0), own=True)

    return _make(data, (x, w, b), backward)


def conv1d(x, w, b, stride: int = 1, padding: str = "same") -> Tensor:
    """1-d cross-correlation: x [B,Cin,T], w [Cout,Cin,K], b [Cout]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError("conv1d expects x [B,Cin,T] and w [Cout,Cin,K]")
    B, Cin, T = x.shape
    Cout, Cin_w, K = w.shape
    if Cin != Cin_w:
        raise DimensionError(f"conv1d: input channels {Cin} != kernel channels {Cin_w}")
    if stride < 1:
        raise InputError("conv1d: stride must be >= 1")
    if padding == "same":
        if K % 2 == 0:
            raise InputError("conv1d: same padding requires odd kernel size")
        pad = (K - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        raise InputError(f"conv1d: unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    Tp = xp.shape[-1]
    T_out = (Tp - K) // stride + 1
    if T_out < 1:
        raise DimensionError("conv1d: input too short for kernel")
    # im2col once: [B,Cin,T_out,K] view -> contiguous [B*T_out, Cin*K] for GEMM
    windows = sliding_window_view(xp, K, axis=2)[:, :, ::stride]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(B * T_out, Cin * K)
    w2 = w.data.reshape(Cout, Cin * K)
    out2 = cols @ w2.T + b.data
    data = out2.reshape(B, T_out, Cout).transpose(0, 2, 1)

    def backward(g):
        # g: [B,Cout,T_out]
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * T_out, Cout)
        if b.requires_grad:
            b.accumulate_grad(g2.sum(axis=0), own=True)
        if w.requires_grad:
            w.accumulate_grad((g2.T @ cols).reshape(Cout, Cin, K), own=True)
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(B, T_out, Cin, K).transpose(0, 2, 1, 3)
            gxp = np.zeros_like(xp)
            span = (T_out - 1) * stride + 1
            for k in range(K):
                # contribution of kernel tap k lands stride-spaced starting at k
                gxp[:, :, k : k + span : stride] += dcols[:, :, :, k]
            x.accumulate_grad(gxp[:, :, pad : pad + T] if pad else gxp, own=True)

    return _make(data, (x, w, b), backward)


def _pool_length(T: int, width: int, stride: int, ceil_mode: bool) -> int:
    if T < 1:
        raise DimensionError("maxpool1d: empty time axis")
    if ceil_mode:
        n = -(-(T - width) // stride) + 1  # ceil division
        n = max(n, 1)
    else:
        n = (T - width) // stride + 1
    if n < 1:
        raise DimensionError(f"maxpool1d: window {width} larger than input {T} (floor mode)")
    return n


def maxpool1d(x, width: int, stride: int, ceil_mode: bool = False) -> Tensor:
    """Max pooling along the last axis of x [B,C,T]; ties go to the lowest index."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError("maxpool1d expects [B,C,T]")
    if width < 1 or stride < 1:
        raise InputError("maxpool1d: width and stride must be >= 1")
    B, C, T = x.shape
    T_out = _pool_length(T, width, stride, ceil_mode)
    full = (T_out - 1) * stride + width
    if full > T:
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, full - T)), constant_values=-np.inf)
    else:
        xp = x.data
    win = np.ascontiguousarray(
        sliding_window_view(xp, width, axis=2)[:, :, ::stride]
    )  # [B,C,T_out,width]
    arg = win.argmax(axis=-1)  # first max wins on ties
    data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        if not x.requires_grad:
            return
        starts = np.arange(T_out) * stride
        pos = starts[None, None, :] + arg  # [B,C,T_out] indices into padded axis
        flat = np.zeros(B * C * xp.shape[-1], dtype=x.dtype)
        base = (np.arange(B * C) * xp.shape[-1]).reshape(B, C, 1)
        np.add.at(flat, (pos + base).ravel(), g.ravel())
        x.accumulate_grad(flat.reshape(B, C, xp.shape[-1])[:, :, :T], own=True)

    return _make(data, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax; rows along `axis` sum to 1."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            x.accumulate_grad(data * (g - dot), own=True)

    return _make(data, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    D = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).reshape(-1, D).sum(axis=0), own=True)
        if beta.requires_grad:
            beta.accumulate_grad(g.reshape(-1, D).sum(axis=0), own=True)
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gx - m1 - xhat * m2), own=True)

    return _make(data, (x, gamma, beta), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError("cross_entropy expects logits [N,C]")
    N, C = logits.shape
    if N < 1:
        raise DimensionError("cross_entropy: empty batch")
    if labels.shape != (N,):
        raise DimensionError(f"cross_entropy: labels shape {labels.shape} != ({N},)")
    if labels.min() < 0 or labels.max() >= C:
        raise InputError(f"cross_entropy: labels must lie in [0,{C})")
    m = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - m)
    z = e.sum(axis=1, keepdims=True)
    logp = logits.data - m - np.log(z)
    data = np.asarray(-logp[np.arange(N), labels].mean(), dtype=logits.dtype)

    def backward(g):
        if logits.requires_grad:
            p = e / z
            p[np.arange(N), labels] -= 1.0
            logits.accumulate_grad(g * p / N, own=True)

    return _make(data, (logits,), backward)


def dropout(x, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when rate == 0 or train is False."""
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise InputError("dropout rate must lie in [0,1)")
    if rng is None:
        raise InputError("dropout in train mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    data = x.data * mask

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask, own=True)

    return _make(data, (x,), backward)


def masked_token_fill(x, mask: np.ndarray, token) -> Tensor:
    """Replace positions of x [..,L,D] where mask [..,L] is True by a learned token [D]."""
    x, token = as_tensor(x), as_tensor(token)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise DimensionError(f"masked_token_fill: mask {mask.shape} does not cover {x.shape[:-1]}")
    m = mask[..., None]
    data = np.where(m, token.data, x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(m, 0.0, g), own=True)
        if token.requires_grad:
            token.accumulate_grad(g[mask].reshape(-1, x.shape[-1]).sum(axis=0), own=True)

    return _make(data, (x, token), backward)


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Scale rows (trailing axis) to unit Euclidean norm; eps guards zero rows."""
    from .tensor import sqrt, sum_, mul, div

    sq = mul(x, x)
    # eps*eps inside the root keeps the gradient finite on all-zero rows
    norm = sqrt(sum_(sq, axis=-1, keepdims=True) + eps * eps)
    return div(x, norm + eps)


def sinusoid_table(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Fixed sin/cos positional encoding table [length, dim]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (idx // 2)) / dim)
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table.astype(dtype)
