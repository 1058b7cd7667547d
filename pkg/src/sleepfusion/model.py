"""Full-model assembly: parameter construction and the joint forward pass
used by pre-training, fine-tuning, and inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backbones, contrastive, sequence
from . import diffcore as dc
from .config import ModelConfig
from .diffcore import Initializer, ParamGroup, Tensor

# parameter-name prefixes of the epoch-level encoder groups (frozen during
# fine-tuning)
BACKBONE_PREFIXES = ("cnn.", "spectf.", "pool_raw.", "pool_spec.")


def build_params(cfg: ModelConfig, rng: np.random.Generator, include_sequence: bool = True) -> ParamGroup:
    init = Initializer(rng)
    params = ParamGroup()
    backbones.add_cnn_params(params, init, cfg)
    backbones.add_spec_transformer_params(params, init, cfg)
    backbones.add_epoch_attention_params(params, init, cfg, "pool_raw")
    backbones.add_epoch_attention_params(params, init, cfg, "pool_spec")
    if include_sequence:
        contrastive.add_projection_params(params, init, cfg, "proj_raw")
        contrastive.add_projection_params(params, init, cfg, "proj_spec")
        sequence.add_cross_block_params(params, init, cfg)
        sequence.add_head_params(params, init, cfg)
    return params


@dataclass
class SequenceOutput:
    feat_raw: Tensor  # [B,L,d] pooled epoch features, raw branch
    feat_spec: Tensor
    emb_raw: Tensor | None  # [B,L,d] unit projections (None when skipped)
    emb_spec: Tensor | None
    logits_raw: Tensor  # [B,L,5]
    logits_spec: Tensor
    logits_fused: Tensor


class Model:
    """Parameter group plus the forward passes that tie the modules together."""

    def __init__(self, cfg: ModelConfig, params: ParamGroup):
        self.cfg = cfg
        self.params = params

    @classmethod
    def build(cls, cfg: ModelConfig, rng: np.random.Generator) -> "Model":
        return cls(cfg, build_params(cfg, rng))

    # -- epoch-level passes over flattened batches -------------------------

    def encode_raw(self, raw: np.ndarray, train=False, rng=None, trace=None) -> Tensor:
        """[N,3000] z-scored raw -> pooled [N,d]."""
        x = Tensor(raw.reshape(raw.shape[0], 1, raw.shape[1]))
        tokens = backbones.cnn_encode(x, self.params, self.cfg)
        return backbones.epoch_pool(tokens, self.params, "pool_raw", trace)

    def encode_spec(self, spec: np.ndarray, train=False, rng=None, trace=None) -> Tensor:
        """[N,29,129] standardized spectrograms -> pooled [N,d]."""
        tokens = backbones.spec_encode(Tensor(spec), self.params, self.cfg, train, rng, trace)
        return backbones.epoch_pool(tokens, self.params, "pool_spec", trace)

    # -- sequence-level joint pass -----------------------------------------

    def forward_sequences(
        self,
        raw: np.ndarray,  # [B,L,3000]
        spec: np.ndarray,  # [B,L,29,129]
        mask_raw: np.ndarray | None = None,  # [B,L] bool
        mask_spec: np.ndarray | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
        with_projection: bool = True,
        trace: dict | None = None,
        cached_features: tuple[Tensor, Tensor] | None = None,
    ) -> SequenceOutput:
        B, L = raw.shape[:2]
        if cached_features is None:
            pooled_raw = self.encode_raw(raw.reshape(B * L, -1), train, rng, trace)
            pooled_spec = self.encode_spec(spec.reshape(B * L, *spec.shape[2:]), train, rng, trace)
            feat_raw = pooled_raw.reshape(B, L, self.cfg.d_model)
            feat_spec = pooled_spec.reshape(B, L, self.cfg.d_model)
        else:
            feat_raw, feat_spec = cached_features
        emb_raw = emb_spec = None
        if with_projection:
            emb_raw = contrastive.project_embed(feat_raw, self.params, "proj_raw")
            emb_spec = contrastive.project_embed(feat_spec, self.params, "proj_spec")
        seq_raw, seq_spec = feat_raw, feat_spec
        if mask_raw is not None and mask_raw.any():
            seq_raw = sequence.apply_masks(seq_raw, mask_raw, self.params["seq.raw.mask_token"].tensor)
        if mask_spec is not None and mask_spec.any():
            seq_spec = sequence.apply_masks(
                seq_spec, mask_spec, self.params["seq.spec.mask_token"].tensor
            )
        t_raw, t_spec = sequence.cross_encode(
            seq_raw, seq_spec, self.params, self.cfg, train, rng, trace
        )
        logits_raw, logits_spec, logits_fused = sequence.heads_forward(t_raw, t_spec, self.params)
        return SequenceOutput(
            feat_raw, feat_spec, emb_raw, emb_spec, logits_raw, logits_spec, logits_fused
        )

    def predict_sequences(self, raw: np.ndarray, spec: np.ndarray) -> np.ndarray:
        """Inference path: no masking, no dropout; argmax of the fused head."""
        with dc.no_grad():
            out = self.forward_sequences(raw, spec, train=False, with_projection=False)
        return out.logits_fused.data.argmax(axis=-1)
