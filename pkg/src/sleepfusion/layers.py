"""Shared attention and transformer-layer building blocks.

Self-attention follows the concat-of-heads form (no output projection);
cross-attention adds a learned output projection so its residual branch
can be silenced independently. Dropout sits on the attention weights and
on the feed-forward output, rate 0.1 by default.
"""

from __future__ import annotations

import math

import numpy as np

from . import diffcore as dc
from .diffcore import Initializer, ParamGroup, Tensor
from .errors import DimensionError


def multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    n_heads: int,
    wo: Tensor | None = None,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    train: bool = False,
    trace: dict | None = None,
    trace_key: str = "",
) -> Tensor:
    B, Tq, D = q_in.shape
    Tk = kv_in.shape[1]
    if D % n_heads:
        raise DimensionError(f"d_model {D} not divisible by {n_heads} heads")
    dk = D // n_heads
    q = dc.matmul(q_in, wq).reshape(B, Tq, n_heads, dk).transpose(0, 2, 1, 3)
    k = dc.matmul(kv_in, wk).reshape(B, Tk, n_heads, dk).transpose(0, 2, 1, 3)
    v = dc.matmul(kv_in, wv).reshape(B, Tk, n_heads, dk).transpose(0, 2, 1, 3)
    scores = dc.mul(dc.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / math.sqrt(dk))
    attn = dc.softmax(scores, axis=-1)
    if trace is not None:
        trace[trace_key] = attn.data.copy()
    attn = dc.dropout(attn, dropout_rate, rng, train)
    out = dc.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, Tq, D)
    if wo is not None:
        out = dc.matmul(out, wo)
    return out


def feed_forward(x: Tensor, w1, b1, w2, b2) -> Tensor:
    return dc.affine(dc.relu(dc.affine(x, w1, b1)), w2, b2)


def add_transformer_layer_params(
    params: ParamGroup, init: Initializer, prefix: str, d_model: int, d_ff: int
) -> None:
    params.add(prefix + "attn.wq", init.xavier(d_model, d_model))
    params.add(prefix + "attn.wk", init.xavier(d_model, d_model))
    params.add(prefix + "attn.wv", init.xavier(d_model, d_model))
    params.add(prefix + "ln1.gain", init.ones(d_model))
    params.add(prefix + "ln1.bias", init.zeros(d_model))
    params.add(prefix + "ff.w1", init.xavier(d_model, d_ff))
    params.add(prefix + "ff.b1", init.zeros(d_ff))
    params.add(prefix + "ff.w2", init.xavier(d_ff, d_model))
    params.add(prefix + "ff.b2", init.zeros(d_model))
    params.add(prefix + "ln2.gain", init.ones(d_model))
    params.add(prefix + "ln2.bias", init.zeros(d_model))


def transformer_layer(
    x: Tensor,
    params: ParamGroup,
    prefix: str,
    n_heads: int,
    dropout_rate: float,
    rng,
    train: bool,
    trace: dict | None = None,
) -> Tensor:
    t = lambda name: params[prefix + name].tensor
    attended = multi_head_attention(
        x,
        x,
        t("attn.wq"),
        t("attn.wk"),
        t("attn.wv"),
        n_heads,
        dropout_rate=dropout_rate,
        rng=rng,
        train=train,
        trace=trace,
        trace_key=prefix + "attn",
    )
    h = dc.layer_norm(dc.add(x, attended), t("ln1.gain"), t("ln1.bias"))
    ff = feed_forward(h, t("ff.w1"), t("ff.b1"), t("ff.w2"), t("ff.b2"))
    ff = dc.dropout(ff, dropout_rate, rng, train)
    return dc.layer_norm(dc.add(h, ff), t("ln2.gain"), t("ln2.bias"))


def add_cross_layer_params(
    params: ParamGroup, init: Initializer, prefix: str, d_model: int, d_ff: int
) -> None:
    params.add(prefix + "self.wq", init.xavier(d_model, d_model))
    params.add(prefix + "self.wk", init.xavier(d_model, d_model))
    params.add(prefix + "self.wv", init.xavier(d_model, d_model))
    params.add(prefix + "ln1.gain", init.ones(d_model))
    params.add(prefix + "ln1.bias", init.zeros(d_model))
    params.add(prefix + "cross.wq", init.xavier(d_model, d_model))
    params.add(prefix + "cross.wk", init.xavier(d_model, d_model))
    params.add(prefix + "cross.wv", init.xavier(d_model, d_model))
    params.add(prefix + "cross.wo", init.xavier(d_model, d_model))
    params.add(prefix + "ln2.gain", init.ones(d_model))
    params.add(prefix + "ln2.bias", init.zeros(d_model))
    params.add(prefix + "ff.w1", init.xavier(d_model, d_ff))
    params.add(prefix + "ff.b1", init.zeros(d_ff))
    params.add(prefix + "ff.w2", init.xavier(d_ff, d_model))
    params.add(prefix + "ff.b2", init.zeros(d_model))
    params.add(prefix + "ln3.gain", init.ones(d_model))
    params.add(prefix + "ln3.bias", init.zeros(d_model))


def cross_layer(
    x: Tensor,
    other_prev: Tensor,
    params: ParamGroup,
    prefix: str,
    n_heads: int,
    dropout_rate: float,
    rng,
    train: bool,
    trace: dict | None = None,
) -> Tensor:
    """Self-attention, then cross-attention into the other modality's
    previous-layer output, then feed-forward; LN after each residual."""
    t = lambda name: params[prefix + name].tensor
    attended = multi_head_attention(
        x,
        x,
        t("self.wq"),
        t("self.wk"),
        t("self.wv"),
        n_heads,
        dropout_rate=dropout_rate,
        rng=rng,
        train=train,
        trace=trace,
        trace_key=prefix + "self",
    )
    h = dc.layer_norm(dc.add(x, attended), t("ln1.gain"), t("ln1.bias"))
    crossed = multi_head_attention(
        h,
        other_prev,
        t("cross.wq"),
        t("cross.wk"),
        t("cross.wv"),
        n_heads,
        wo=t("cross.wo"),
        dropout_rate=dropout_rate,
        rng=rng,
        train=train,
        trace=trace,
        trace_key=prefix + "cross",
    )
    c = dc.layer_norm(dc.add(h, crossed), t("ln2.gain"), t("ln2.bias"))
    ff = feed_forward(c, t("ff.w1"), t("ff.b1"), t("ff.w2"), t("ff.b2"))
    ff = dc.dropout(ff, dropout_rate, rng, train)
    return dc.layer_norm(dc.add(c, ff), t("ln3.gain"), t("ln3.bias"))
