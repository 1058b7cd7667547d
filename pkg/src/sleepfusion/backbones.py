"""Epoch-level encoders.

Raw branch: five conv blocks (kernel 3, stride 1, same padding, ReLU),
width-5 ceil max-pools after every block but the first (3000 -> 600 ->
120 -> 24 -> 5), and a final width-2 pool across channels that lands on
d_model, giving [B, 5, d_model] tokens.

Spectrogram branch: a kernel-3 conv over the 29 frames resizes 129
frequency bins to d_model, adds a fixed sinusoidal positional table, and
runs a stack of post-LN transformer layers, giving [B, 29, d_model].

Both branches end in the same learned soft attention over tokens which
pools to one [B, d_model] vector per epoch.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .config import ModelConfig
from .diffcore import Initializer, ParamGroup, Tensor
from .dsp import EPOCH_SAMPLES, N_BINS, N_FRAMES
from .errors import DimensionError
from .layers import add_transformer_layer_params, transformer_layer

RAW_TOKENS = 5
SPEC_TOKENS = N_FRAMES  # 29


# -- raw-signal CNN ----------------------------------------------------------


def cnn_layer_table(cfg: ModelConfig) -> list[dict]:
    """Declarative conv-layer list; parameter counts derive from this."""
    table = []
    c_in = 1
    for block, (c_out, n_convs) in enumerate(zip(cfg.cnn_channels, cfg.convs_per_block)):
        for j in range(n_convs):
            table.append(
                {
                    "name": f"cnn.block{block}.conv{j}",
                    "c_in": c_in,
                    "c_out": c_out,
                    "kernel": 3,
                }
            )
            c_in = c_out
    return table


def add_cnn_params(params: ParamGroup, init: Initializer, cfg: ModelConfig) -> None:
    for entry in cnn_layer_table(cfg):
        params.add(entry["name"] + ".w", init.he_conv(entry["c_out"], entry["c_in"], entry["kernel"]))
        params.add(entry["name"] + ".b", init.zeros(entry["c_out"]))


def cnn_encode(x: Tensor, params: ParamGroup, cfg: ModelConfig) -> Tensor:
    """[B,1,3000] -> [B,5,d_model] token features."""
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != EPOCH_SAMPLES:
        raise DimensionError(f"cnn_encode expects [B,1,{EPOCH_SAMPLES}], got {x.shape}")
    h = x
    for block, n_convs in enumerate(cfg.convs_per_block):
        for j in range(n_convs):
            name = f"cnn.block{block}.conv{j}"
            h = dc.relu(dc.conv1d(h, params[name + ".w"].tensor, params[name + ".b"].tensor))
        if block > 0:
            h = dc.maxpool1d(h, width=5, stride=5, ceil_mode=True)
    # [B,C,5] -> [B,5,C] -> width-2 pool across channels -> [B,5,d_model]
    h = h.transpose(0, 2, 1)
    return dc.maxpool1d(h, width=2, stride=2)


# -- spectrogram transformer --------------------------------------------------


def add_spec_transformer_params(params: ParamGroup, init: Initializer, cfg: ModelConfig) -> None:
    d = cfg.d_model
    params.add("spectf.proj.w", init.he_conv(d, N_BINS, 3))
    params.add("spectf.proj.b", init.zeros(d))
    for layer in range(cfg.backbone_layers):
        add_transformer_layer_params(params, init, f"spectf.layer{layer}.", d, cfg.d_ff)


def positional_table(length: int, d_model: int) -> Tensor:
    return Tensor(dc.sinusoid_table(length, d_model))


def spec_project(spec: Tensor, params: ParamGroup, cfg: ModelConfig) -> Tensor:
    """[B,29,129] -> [B,29,d_model]: conv resize + ReLU + positional table."""
    if spec.ndim != 3 or spec.shape[1] != N_FRAMES or spec.shape[2] != N_BINS:
        raise DimensionError(f"spec_project expects [B,{N_FRAMES},{N_BINS}], got {spec.shape}")
    h = spec.transpose(0, 2, 1)  # bins become conv channels
    h = dc.relu(dc.conv1d(h, params["spectf.proj.w"].tensor, params["spectf.proj.b"].tensor))
    h = h.transpose(0, 2, 1)
    return dc.add(h, positional_table(N_FRAMES, cfg.d_model))


def transformer_encode(
    x: Tensor,
    params: ParamGroup,
    cfg: ModelConfig,
    prefix: str = "spectf.",
    train: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    """Stack of post-LN transformer layers; shape preserved."""
    if x.shape[-1] != cfg.d_model:
        raise DimensionError(f"transformer_encode expects trailing dim {cfg.d_model}")
    h = x
    for layer in range(cfg.backbone_layers):
        h = transformer_layer(
            h, params, f"{prefix}layer{layer}.", cfg.n_heads, cfg.dropout, rng, train, trace
        )
    return h


def spec_encode(
    spec: Tensor,
    params: ParamGroup,
    cfg: ModelConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    trace: dict | None = None,
) -> Tensor:
    return transformer_encode(
        spec_project(spec, params, cfg), params, cfg, "spectf.", train, rng, trace
    )


# -- epoch-wise attention pooling ---------------------------------------------


def add_epoch_attention_params(params: ParamGroup, init: Initializer, cfg: ModelConfig, prefix: str) -> None:
    d = cfg.d_model
    params.add(prefix + ".w", init.xavier(d, d))
    params.add(prefix + ".b", init.zeros(d))
    params.add(prefix + ".ctx", init.normal((d,), std=1.0 / np.sqrt(d)))


def epoch_pool(
    z: Tensor, params: ParamGroup, prefix: str, trace: dict | None = None
) -> Tensor:
    """Soft attention over the token axis: [B,T,d] -> [B,d].

    Scores are tanh(affine(token)) dotted with a learned context vector,
    normalized over tokens; the output is the attention-weighted sum.
    """
    B, T, d = z.shape
    scores = dc.tanh(dc.affine(z, params[prefix + ".w"].tensor, params[prefix + ".b"].tensor))
    logits = dc.sum_(dc.mul(scores, params[prefix + ".ctx"].tensor), axis=-1)  # [B,T]
    alpha = dc.softmax(logits, axis=-1)
    if trace is not None:
        trace[prefix + ".alpha"] = alpha.data.copy()
    weighted = dc.mul(z, alpha.reshape(B, T, 1))
    return dc.sum_(weighted, axis=1)
