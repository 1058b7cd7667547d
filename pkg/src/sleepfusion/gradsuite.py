"""Finite-difference verification suite covering every differentiable op
and the three end-to-end compositions (epoch encoders, contrastive
projection, masked cross-attention sequence path).

Everything runs in float64 with deterministic inputs chosen away from
pooling ties and ReLU kinks. Compositions probe a random subset of
coordinates per tensor to stay inside the runtime budget.
"""

from __future__ import annotations

import numpy as np

from . import backbones, contrastive, sequence
from . import diffcore as dc
from .config import ModelConfig
from .diffcore import ParamGroup, Tensor, grad_check
from .model import build_params

OP_TOL = 1e-5
COMPOSITION_TOL = 1e-4


def tiny_config() -> ModelConfig:
    return ModelConfig(
        preset="desk",
        cnn_channels=(2, 2, 4, 8, 16),
        convs_per_block=(1, 1, 1, 1, 1),
        n_heads=2,
        d_ff=16,
        backbone_layers=1,
        seq_layers=1,
        head_hidden=8,
        seq_len=3,
    ).validate()


def _t(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))  # float64 from standard_normal


def _readout(rng, shape) -> Tensor:
    """Fixed random linear functional; avoids degenerate scalarizations."""
    return Tensor(rng.standard_normal(shape))


def _params64(params: ParamGroup) -> ParamGroup:
    out = ParamGroup()
    for p in params:
        out.add(p.name, p.tensor.data.astype(np.float64), p.trainable)
    return out


def op_checks() -> list[tuple[str, float, float]]:
    rng = np.random.default_rng(20240817)
    results = []

    def check(name, f, inputs, **kw):
        results.append((name, grad_check(f, inputs, **kw), OP_TOL))

    r = _readout(rng, (2, 3, 6))
    check("add", lambda a, b: dc.sum_(dc.mul(dc.add(a, b), r)), [_t(rng, 2, 3, 6), _t(rng, 3, 6)])
    check("mul", lambda a, b: dc.sum_(dc.mul(dc.mul(a, b), r)), [_t(rng, 2, 3, 6), _t(rng, 2, 3, 6)])
    check("div", lambda a, b: dc.sum_(dc.mul(dc.div(a, b), r)),
          [_t(rng, 2, 3, 6), Tensor(rng.uniform(0.5, 2.0, (2, 3, 6)))])
    rm = _readout(rng, (2, 3, 5))
    check("matmul", lambda a, b: dc.sum_(dc.mul(dc.matmul(a, b), rm)), [_t(rng, 2, 3, 4), _t(rng, 4, 5)])
    check("affine", lambda x, w, b: dc.sum_(dc.mul(dc.affine(x, w, b), rm)),
          [_t(rng, 2, 3, 4), _t(rng, 4, 5), _t(rng, 5)])
    rc = _readout(rng, (2, 3, 7))
    check("conv1d_same", lambda x, w, b: dc.sum_(dc.mul(dc.conv1d(x, w, b, padding="same"), rc)),
          [_t(rng, 2, 2, 7), _t(rng, 3, 2, 3), _t(rng, 3)])
    rc2 = _readout(rng, (2, 3, 3))
    check("conv1d_strided_valid",
          lambda x, w, b: dc.sum_(dc.mul(dc.conv1d(x, w, b, stride=2, padding="valid"), rc2)),
          [_t(rng, 2, 2, 7), _t(rng, 3, 2, 3), _t(rng, 3)])
    rp = _readout(rng, (2, 2, 4))
    check("maxpool_ceil", lambda x: dc.sum_(dc.mul(dc.maxpool1d(x, 3, 3, ceil_mode=True), rp)),
          [_t(rng, 2, 2, 10)])
    rp2 = _readout(rng, (2, 2, 3))
    check("maxpool_floor", lambda x: dc.sum_(dc.mul(dc.maxpool1d(x, 4, 2), rp2)), [_t(rng, 2, 2, 8)])
    rs = _readout(rng, (3, 5))
    check("softmax", lambda x: dc.sum_(dc.mul(dc.softmax(x, axis=-1), rs)), [_t(rng, 3, 5)])
    check("layer_norm", lambda x, g, b: dc.sum_(dc.mul(dc.layer_norm(x, g, b), rs)),
          [_t(rng, 3, 5), _t(rng, 5), _t(rng, 5)])
    labels = np.array([0, 3, 2])
    check("cross_entropy", lambda x: dc.cross_entropy(x, labels), [_t(rng, 3, 5)])
    check("relu", lambda x: dc.sum_(dc.mul(dc.relu(x), rs)), [_t(rng, 3, 5)])
    check("tanh", lambda x: dc.sum_(dc.mul(dc.tanh(x), rs)), [_t(rng, 3, 5)])
    check("exp", lambda x: dc.sum_(dc.mul(dc.exp(x), rs)), [_t(rng, 3, 5)])
    check("log", lambda x: dc.sum_(dc.mul(dc.log(x), rs)), [Tensor(rng.uniform(0.5, 3.0, (3, 5)))])
    check("sqrt", lambda x: dc.sum_(dc.mul(dc.sqrt(x), rs)), [Tensor(rng.uniform(0.5, 3.0, (3, 5)))])
    check("l2_normalize", lambda x: dc.sum_(dc.mul(dc.l2_normalize(x), rs)), [_t(rng, 3, 5)])

    def drop_fn(x):
        drop_rng = np.random.default_rng(99)  # fixed mask per evaluation
        return dc.sum_(dc.mul(dc.dropout(x, 0.3, drop_rng, train=True), rs))

    check("dropout_train", drop_fn, [_t(rng, 3, 5)])
    mask = np.array([[True, False, True], [False, False, True]])
    rt = _readout(rng, (2, 3, 4))
    check("masked_token_fill",
          lambda x, tok: dc.sum_(dc.mul(dc.masked_token_fill(x, mask, tok), rt)),
          [_t(rng, 2, 3, 4), _t(rng, 4)])
    rq = _readout(rng, (2, 4))
    pool_group = ParamGroup()
    pw = pool_group.add("pool.w", rng.standard_normal((4, 4)))
    pb = pool_group.add("pool.b", rng.standard_normal(4))
    pc = pool_group.add("pool.ctx", rng.standard_normal(4))

    def pool_fn(z, w, b, ctx):
        # w/b/ctx are the very tensors inside pool_group
        return dc.sum_(dc.mul(backbones.epoch_pool(z, pool_group, "pool"), rq))

    check("epoch_pool", pool_fn, [_t(rng, 2, 3, 4), pw.tensor, pb.tensor, pc.tensor])
    check("info_nce", lambda a, b: contrastive.info_nce_loss(a, b, tau=0.5),
          [_t(rng, 3, 2, 4), _t(rng, 3, 2, 4)])
    return results


def _nudge_biases(params: ParamGroup, rng: np.random.Generator) -> None:
    """Move bias-like params off zero so ReLU plateaus (exact-zero
    preactivations from zero biases over dead windows) cannot sit on the
    non-differentiable point probed by central differences."""
    for p in params:
        if p.name.endswith((".b", ".bias")):
            mag = rng.uniform(0.01, 0.05, size=p.tensor.shape)
            sign = np.where(rng.random(p.tensor.shape) < 0.5, -1.0, 1.0)
            p.tensor.data = p.tensor.data + mag * sign


_FD_STEP = 1e-6  # narrow straddle window around kinks/ties, ample in float64


def composition_checks() -> list[tuple[str, float, float]]:
    cfg = tiny_config()
    results = []

    # 1. epoch-level path: both encoders -> pooling -> linear head -> CE
    rng = np.random.default_rng(105)
    params = _params64(build_params(cfg, np.random.default_rng(5), include_sequence=False))
    _nudge_biases(params, rng)
    head_w = Tensor(rng.standard_normal((cfg.d_model, 5)) * 0.3)
    head_b = Tensor(rng.standard_normal(5) * 0.1)
    raw = Tensor(rng.standard_normal((2, 1, 3000)))
    spec = Tensor(rng.standard_normal((2, 29, 129)))
    labels = np.array([1, 4])
    tensors = [raw, spec, head_w, head_b] + [p.tensor for p in params]

    def epoch_path(*ts):
        tokens = backbones.cnn_encode(ts[0], params, cfg)
        pooled_raw = backbones.epoch_pool(tokens, params, "pool_raw")
        enc = backbones.spec_encode(ts[1], params, cfg)
        pooled_spec = backbones.epoch_pool(enc, params, "pool_spec")
        loss_r = dc.cross_entropy(dc.affine(pooled_raw, ts[2], ts[3]), labels)
        loss_s = dc.cross_entropy(dc.affine(pooled_spec, ts[2], ts[3]), labels)
        return dc.add(loss_r, loss_s)

    err = grad_check(epoch_path, tensors, step=_FD_STEP, max_coords=4,
                     rng=np.random.default_rng(205))
    results.append(("composition_epoch_level", err, COMPOSITION_TOL))

    # 2. contrastive path: projections -> InfoNCE
    rng = np.random.default_rng(106)
    params_c = _params64(build_params(cfg, np.random.default_rng(6)))
    _nudge_biases(params_c, rng)
    feat_raw = Tensor(rng.standard_normal((2, 3, cfg.d_model)))
    feat_spec = Tensor(rng.standard_normal((2, 3, cfg.d_model)))
    proj_tensors = [feat_raw, feat_spec] + [
        p.tensor for p in params_c if p.name.startswith(("proj_raw.", "proj_spec."))
    ]

    def contrastive_path(*ts):
        e_raw = contrastive.project_embed(ts[0], params_c, "proj_raw")
        e_spec = contrastive.project_embed(ts[1], params_c, "proj_spec")
        return contrastive.info_nce_loss(e_raw, e_spec, tau=0.1)

    err = grad_check(contrastive_path, proj_tensors, step=_FD_STEP, max_coords=5,
                     rng=np.random.default_rng(206))
    results.append(("composition_contrastive", err, COMPOSITION_TOL))

    # 3. masked sequence path on [1,3,d]: mask -> cross blocks -> heads -> loss
    rng = np.random.default_rng(107)
    seq_raw = Tensor(rng.standard_normal((1, 3, cfg.d_model)))
    seq_spec = Tensor(rng.standard_normal((1, 3, cfg.d_model)))
    mask_raw = np.array([[True, False, False]])
    mask_spec = np.array([[False, False, True]])
    seq_labels = np.array([[0, 2, 4]])
    seq_tensors = [seq_raw, seq_spec] + [
        p.tensor for p in params_c if p.name.startswith(("seq.", "heads."))
    ]

    def masked_path(*ts):
        m_raw = sequence.apply_masks(ts[0], mask_raw, params_c["seq.raw.mask_token"].tensor)
        m_spec = sequence.apply_masks(ts[1], mask_spec, params_c["seq.spec.mask_token"].tensor)
        t_raw, t_spec = sequence.cross_encode(m_raw, m_spec, params_c, cfg)
        lr_, ls_, lf_ = sequence.heads_forward(t_raw, t_spec, params_c)
        return sequence.sequence_loss(lr_, ls_, lf_, seq_labels, (1.0, 0.1, 0.1))

    err = grad_check(masked_path, seq_tensors, step=_FD_STEP, max_coords=4,
                     rng=np.random.default_rng(207))
    results.append(("composition_masked_sequence", err, COMPOSITION_TOL))
    return results


def run_gradient_suite() -> list[tuple[str, float, float]]:
    return op_checks() + composition_checks()
