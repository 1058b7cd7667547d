"""Sequence-level model: masking of pooled epoch features, dual transformer
stacks coupled layer-by-layer through cross-attention, classification
heads, and the three-headed sequence loss.

Masking replaces whole feature vectors with one learnable token per
modality. The two stacks run layer-synchronously: at layer l each stack's
cross-attention reads the other stack's layer l-1 output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import ModelConfig
from .diffcore import Initializer, ParamGroup, Tensor
from .errors import DimensionError, InputError
from .layers import add_cross_layer_params, cross_layer


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class MaskSpec:
    ratio: float
    mode: str
    mask_raw: np.ndarray  # [L] bool
    mask_spec: np.ndarray  # [L] bool


def sample_masks(L: int, ratio: float, mode: str, rng: np.random.Generator) -> MaskSpec:
    """Choose exactly round-half-up(ratio*L) positions per modality."""
    if not 0.0 <= ratio <= 1.0:
        raise InputError("mask ratio must lie in [0,1]")
    if mode not in ("independent", "complementary"):
        raise InputError(f"unknown mask mode {mode!r}")
    k = round_half_up(ratio * L)
    mask_raw = np.zeros(L, dtype=bool)
    mask_spec = np.zeros(L, dtype=bool)
    if mode == "independent":
        mask_raw[rng.choice(L, size=k, replace=False)] = True
        mask_spec[rng.choice(L, size=k, replace=False)] = True
    else:
        if ratio > 0.5:
            raise InputError("complementary masking requires ratio <= 0.5")
        chosen = rng.choice(L, size=k, replace=False)
        mask_raw[chosen] = True
        rest = np.flatnonzero(~mask_raw)
        # at ratio 0.5 with odd L the complement is one short of k; the
        # masks then partition the positions (k and L-k)
        mask_spec[rng.choice(rest, size=min(k, rest.size), replace=False)] = True
    return MaskSpec(ratio, mode, mask_raw, mask_spec)


def apply_masks(seq: Tensor, mask: np.ndarray, token: Tensor) -> Tensor:
    """Replace masked positions of [B,L,D] (or [L,D]) with the shared token."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1 and seq.ndim == 3:
        mask = np.broadcast_to(mask, seq.shape[:2])
    return dc.masked_token_fill(seq, mask, token)


def add_cross_block_params(params: ParamGroup, init: Initializer, cfg: ModelConfig) -> None:
    d = cfg.d_model
    for stream in ("raw", "spec"):
        params.add(f"seq.{stream}.mask_token", init.normal((d,), std=0.02))
        for layer in range(cfg.seq_layers):
            add_cross_layer_params(params, init, f"seq.{stream}.layer{layer}.", d, cfg.d_ff)


def cross_encode(
    seq_raw: Tensor,
    seq_spec: Tensor,
    params: ParamGroup,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> tuple[Tensor, Tensor]:
    """Run both modality stacks with layer-synchronous cross-attention."""
    if seq_raw.shape != seq_spec.shape:
        raise DimensionError(f"sequence shapes differ: {seq_raw.shape} vs {seq_spec.shape}")
    L = seq_raw.shape[1]
    pe = Tensor(dc.sinusoid_table(L, cfg.d_model))
    x_raw = dc.add(seq_raw, pe)
    x_spec = dc.add(seq_spec, pe)
    for layer in range(cfg.seq_layers):
        y_raw = cross_layer(
            x_raw, x_spec, params, f"seq.raw.layer{layer}.", cfg.n_heads, cfg.dropout, rng, train, trace
        )
        y_spec = cross_layer(
            x_spec, x_raw, params, f"seq.spec.layer{layer}.", cfg.n_heads, cfg.dropout, rng, train, trace
        )
        x_raw, x_spec = y_raw, y_spec
    return x_raw, x_spec


def add_head_params(params: ParamGroup, init: Initializer, cfg: ModelConfig) -> None:
    d, hidden, classes = cfg.d_model, cfg.head_hidden, cfg.n_classes
    for stream, d_in in (("raw", d), ("spec", d), ("fused", 2 * d)):
        params.add(f"heads.{stream}.fc1.w", init.xavier(d_in, hidden))
        params.add(f"heads.{stream}.fc1.b", init.zeros(hidden))
        # small final-layer init keeps fresh logits near uniform
        params.add(f"heads.{stream}.fc2.w", init.normal((hidden, classes), std=0.01))
        params.add(f"heads.{stream}.fc2.b", init.zeros(classes))


def _head(x: Tensor, params: ParamGroup, stream: str) -> Tensor:
    h = dc.relu(
        dc.affine(x, params[f"heads.{stream}.fc1.w"].tensor, params[f"heads.{stream}.fc1.b"].tensor)
    )
    return dc.affine(h, params[f"heads.{stream}.fc2.w"].tensor, params[f"heads.{stream}.fc2.b"].tensor)


def heads_forward(
    t_raw: Tensor, t_spec: Tensor, params: ParamGroup
) -> tuple[Tensor, Tensor, Tensor]:
    """Per-modality and concatenated classification logits, each [B,L,5]."""
    logits_raw = _head(t_raw, params, "raw")
    logits_spec = _head(t_spec, params, "spec")
    fused = dc.concat([t_raw, t_spec], axis=-1)
    logits_fused = _head(fused, params, "fused")
    return logits_raw, logits_spec, logits_fused


def sequence_loss(
    logits_raw: Tensor,
    logits_spec: Tensor,
    logits_fused: Tensor,
    labels: np.ndarray,
    weights: tuple[float, float, float],
) -> Tensor:
    """Weighted sum of the three cross-entropies, each averaged per position."""
    labels = np.asarray(labels).reshape(-1)
    w1, w2, w3 = weights
    total = None
    for w, logits in ((w1, logits_raw), (w2, logits_spec), (w3, logits_fused)):
        n_classes = logits.shape[-1]
        term = dc.mul(dc.cross_entropy(logits.reshape(-1, n_classes), labels), w)
        total = term if total is None else dc.add(total, term)
    return total
