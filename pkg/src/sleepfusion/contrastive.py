"""Cross-modal alignment: projection heads and the bidirectional InfoNCE
loss between raw-signal and spectrogram epoch embeddings.

Positives are the two views of the same (batch item, epoch position);
negatives are the other batch items at the same epoch position. Both
anchor directions are averaged.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .config import ModelConfig
from .diffcore import Initializer, ParamGroup, Tensor
from .errors import InputError


def add_projection_params(params: ParamGroup, init: Initializer, cfg: ModelConfig, prefix: str) -> None:
    d = cfg.d_model
    params.add(prefix + ".fc1.w", init.xavier(d, d))
    params.add(prefix + ".fc1.b", init.zeros(d))
    params.add(prefix + ".fc2.w", init.xavier(d, d))
    params.add(prefix + ".fc2.b", init.zeros(d))


def project_embed(o: Tensor, params: ParamGroup, prefix: str) -> Tensor:
    """Two-layer projection followed by L2 normalization to the unit sphere."""
    h = dc.relu(dc.affine(o, params[prefix + ".fc1.w"].tensor, params[prefix + ".fc1.b"].tensor))
    h = dc.affine(h, params[prefix + ".fc2.w"].tensor, params[prefix + ".fc2.b"].tensor)
    return dc.l2_normalize(h)


def info_nce_loss(emb_raw: Tensor, emb_spec: Tensor, tau: float) -> Tensor:
    """Mean of the two directional InfoNCE losses over all epoch positions.

    Inputs are unit embeddings [B,L,D] (or [B,D], treated as L=1). For a
    given position j, the [B,B] similarity matrix pits each anchor against
    every batch item's other-modality embedding at the same j.
    """
    if tau <= 0:
        raise InputError("tau must be positive")
    if emb_raw.ndim == 2:
        emb_raw = emb_raw.reshape(emb_raw.shape[0], 1, emb_raw.shape[1])
        emb_spec = emb_spec.reshape(emb_spec.shape[0], 1, emb_spec.shape[1])
    if emb_raw.shape != emb_spec.shape:
        raise InputError(f"embedding shapes differ: {emb_raw.shape} vs {emb_spec.shape}")
    B, L, D = emb_raw.shape
    if B < 2:
        raise InputError("InfoNCE needs batch size >= 2 for negatives")
    a = emb_raw.transpose(1, 0, 2)  # [L,B,D]
    b = emb_spec.transpose(1, 0, 2)
    sim = dc.mul(dc.matmul(a, b.transpose(0, 2, 1)), 1.0 / tau)  # [L,B,B]
    labels = np.tile(np.arange(B), L)
    loss_raw2spec = dc.cross_entropy(sim.reshape(L * B, B), labels)
    loss_spec2raw = dc.cross_entropy(sim.transpose(0, 2, 1).reshape(L * B, B), labels)
    return dc.mul(dc.add(loss_raw2spec, loss_spec2raw), 0.5)
