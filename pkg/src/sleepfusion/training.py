"""Training regimen: backbone warm-up (stage0), joint pre-training with the
contrastive plus masked-sequence objective, frozen-backbone fine-tuning,
evaluation, early stopping, and the ablation harness."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import contrastive, data, dsp, sequence
from . import diffcore as dc
from .config import ModelConfig, TrainConfig, sub_rng
from .diffcore import AdamState, ParamGroup, Tensor, adam_step
from .errors import InputError, StateError
from .metrics import Metrics, compute_metrics
from .model import BACKBONE_PREFIXES, Model, build_params

log = logging.getLogger(__name__)


def should_stop(history: list[float], patience: int) -> bool:
    """True iff the best value has gone unimproved for `patience` events."""
    if patience < 1:
        raise InputError("patience must be >= 1")
    if not history:
        return False
    best_idx = int(np.argmax(history))  # first occurrence of the best
    return (len(history) - 1 - best_idx) >= patience


def split_windows(
    ds: data.Dataset, L: int, val_fraction: float, seed: int
) -> tuple[list[data.SequenceWindow], list[data.SequenceWindow]]:
    """Deterministic sequence-level holdout split."""
    windows = data.enumerate_windows(ds, L)
    if not windows:
        raise InputError(f"no recording reaches length L={L}")
    rng = sub_rng(seed, "split")
    order = np.arange(len(windows))
    rng.shuffle(order)
    n_val = max(1, int(round(val_fraction * len(windows)))) if val_fraction > 0 else 0
    val_idx = set(order[:n_val].tolist())
    train = [w for i, w in enumerate(windows) if i not in val_idx]
    val = [w for i, w in enumerate(windows) if i in val_idx]
    return train, val


class TrainLog:
    """Append-only CSV: step,loss_epoch,loss_seq,loss_total,val_acc."""

    def __init__(self, path: str | Path | None, seed: int, stage: str):
        self.path = Path(path) if path else None
        self.rows: list[tuple] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                fh.write(f"# seed={seed} stage={stage}\n")
                fh.write("step,loss_epoch,loss_seq,loss_total,val_acc\n")

    def log(self, step: int, le: float, ls: float, lt: float, val_acc: float | None = None):
        row = (step, le, ls, lt, val_acc)
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                va = repr(val_acc) if val_acc is not None else ""
                fh.write(f"{step},{le!r},{ls!r},{lt!r},{va}\n")


def _augment_batch(raw: np.ndarray, spec: np.ndarray, rng: np.random.Generator):
    """One random raw scheme per epoch; additive noise on every spectrogram."""
    raw = raw.copy()
    B, L = raw.shape[:2]
    for b in range(B):
        for j in range(L):
            raw[b, j] = dsp.random_raw_augment(raw[b, j], rng)
    noise = rng.normal(0.0, 0.05, size=spec.shape).astype(np.float32)
    return raw, spec + noise


def _sample_batch_masks(B: int, L: int, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    mask_raw = np.zeros((B, L), dtype=bool)
    mask_spec = np.zeros((B, L), dtype=bool)
    for b in range(B):
        spec = sequence.sample_masks(L, cfg.mask_ratio, cfg.mask_mode, rng)
        mask_raw[b] = spec.mask_raw
        mask_spec[b] = spec.mask_spec
    return mask_raw, mask_spec


def _sequence_accuracy(model: Model, ds: data.Dataset, windows, batch_size: int, L: int) -> float:
    """Fused-head accuracy over the given windows (no masking, no dropout)."""
    hits = total = 0
    for batch in data.make_sequence_batches(ds, L, batch_size, rng=None, windows=windows):
        raw, spec, labels = data.gather_batch(ds, batch, L)
        pred = model.predict_sequences(raw, spec)
        hits += int((pred == labels).sum())
        total += labels.size
    return hits / total if total else 0.0


def evaluate_model(model: Model, ds: data.Dataset, windows, batch_size: int = 8) -> Metrics:
    L = model.cfg.seq_len
    trues, preds = [], []
    for batch in data.make_sequence_batches(ds, L, batch_size, rng=None, windows=windows):
        raw, spec, labels = data.gather_batch(ds, batch, L)
        preds.append(model.predict_sequences(raw, spec).reshape(-1))
        trues.append(labels.reshape(-1))
    return compute_metrics(np.concatenate(trues), np.concatenate(preds))


def evaluate(ds: data.Dataset, checkpoint: str | Path, batch_size: int = 8) -> Metrics:
    """Score every full window of the dataset with a saved checkpoint."""
    model = load_model(checkpoint)
    windows = data.enumerate_windows(ds, model.cfg.seq_len)
    if not windows:
        raise InputError(f"no recording reaches length L={model.cfg.seq_len}")
    return evaluate_model(model, ds, windows, batch_size)


# -- checkpoint plumbing -----------------------------------------------------


def save_model(model: Model, path: str | Path, stage: str, step: int, seed: int,
               exclude_prefixes: tuple[str, ...] = ()) -> Path:
    arrays = {
        name: p for name, p in model.params.state_arrays().items()
        if not name.startswith(exclude_prefixes)
    }
    meta = {"stage": stage, "step": step, "seed": seed, "model": model.cfg.to_dict()}
    dc.save_arrays(arrays, path, meta)
    return Path(path)


def load_model(path: str | Path) -> Model:
    arrays, meta = dc.load_arrays(path)
    if "model" not in meta:
        raise StateError(f"checkpoint {path} lacks model metadata")
    cfg = ModelConfig.from_dict(meta["model"])
    params = build_params(cfg, sub_rng(int(meta.get("seed", 0)), "init"))
    params.load_arrays(arrays, strict=True)
    return Model(cfg, params)


# -- stage 0: epoch-level backbone warm-up ------------------------------------


def _flatten_epochs(ds: data.Dataset):
    ds.prepare()
    raw = np.concatenate([ds.normalized(i) for i in range(len(ds.recordings))])
    spec = np.concatenate([ds.spectrograms(i) for i in range(len(ds.recordings))])
    labels = np.concatenate([r.labels for r in ds.recordings]).astype(np.int64)
    return raw, spec, labels


def stage0_train(
    ds: data.Dataset,
    config: TrainConfig,
    out: str | Path | None = None,
    log_path: str | Path | None = None,
) -> tuple[Model, dict]:
    """Train each backbone plus its attention pool and a throwaway linear
    head on single labeled epochs; heads are dropped from the checkpoint."""
    if config.stage != "stage0":
        raise InputError(f"stage0_train got config.stage={config.stage!r}")
    raw, spec, labels = _flatten_epochs(ds)
    n = labels.size
    if n == 0:
        raise InputError("empty dataset")
    cfg = config.model
    init_rng = sub_rng(config.seed, "init")
    params = build_params(cfg, init_rng, include_sequence=False)
    head_init = dc.Initializer(init_rng)
    params.add("tmp_head_raw.w", head_init.xavier(cfg.d_model, cfg.n_classes))
    params.add("tmp_head_raw.b", head_init.zeros(cfg.n_classes))
    params.add("tmp_head_spec.w", head_init.xavier(cfg.d_model, cfg.n_classes))
    params.add("tmp_head_spec.b", head_init.zeros(cfg.n_classes))
    model = Model(cfg, params)

    state = AdamState(config.lr, config.beta1, config.beta2, weight_decay=config.weight_decay)
    params.zero_grad()
    batch_rng = sub_rng(config.seed, "batches")
    drop_rng = sub_rng(config.seed, "dropout")
    aug_rng = sub_rng(config.seed, "augment")
    logger = TrainLog(log_path, config.seed, "stage0")
    order = np.array([], dtype=np.int64)
    step = 0
    while step < config.max_steps:
        if order.size < config.batch_size:
            fresh = np.arange(n)
            batch_rng.shuffle(fresh)
            order = np.concatenate([order, fresh])
        idx, order = order[: config.batch_size], order[config.batch_size :]
        xb, sb, yb = raw[idx], spec[idx], labels[idx]
        if config.augment:
            xb, sb = _augment_batch(xb[:, None], sb[:, None], aug_rng)
            xb, sb = xb[:, 0], sb[:, 0]
        feat_raw = model.encode_raw(xb, train=True, rng=drop_rng)
        feat_spec = model.encode_spec(sb, train=True, rng=drop_rng)
        logits_raw = dc.affine(feat_raw, params["tmp_head_raw.w"].tensor, params["tmp_head_raw.b"].tensor)
        logits_spec = dc.affine(feat_spec, params["tmp_head_spec.w"].tensor, params["tmp_head_spec.b"].tensor)
        loss_raw = dc.cross_entropy(logits_raw, yb)
        loss_spec = dc.cross_entropy(logits_spec, yb)
        total = dc.add(loss_raw, loss_spec)
        total.backward()
        adam_step(params, state)
        step += 1
        logger.log(step, 0.0, float(total.data), float(total.data))

    result = {"steps": step, "final_loss": float(total.data)}
    if out:
        save_model(model, out, "stage0", step, config.seed, exclude_prefixes=("tmp_head_",))
    return model, result


def stage0_epoch_accuracy(model: Model, ds: data.Dataset) -> tuple[float, float]:
    """Train-set accuracy of the two single-epoch models (raw, spectrogram)."""
    raw, spec, labels = _flatten_epochs(ds)
    hits_raw = hits_spec = 0
    bs = 64
    with dc.no_grad():
        for i in range(0, labels.size, bs):
            fr = model.encode_raw(raw[i : i + bs])
            fs = model.encode_spec(spec[i : i + bs])
            p = model.params
            lr_ = dc.affine(fr, p["tmp_head_raw.w"].tensor, p["tmp_head_raw.b"].tensor)
            ls_ = dc.affine(fs, p["tmp_head_spec.w"].tensor, p["tmp_head_spec.b"].tensor)
            hits_raw += int((lr_.data.argmax(-1) == labels[i : i + bs]).sum())
            hits_spec += int((ls_.data.argmax(-1) == labels[i : i + bs]).sum())
    return hits_raw / labels.size, hits_spec / labels.size


# -- joint pre-training --------------------------------------------------------


def pretrain_run(
    ds: data.Dataset,
    config: TrainConfig,
    init: str | Path | None,
    out: str | Path,
    from_scratch: bool = False,
    log_path: str | Path | None = None,
    use_contrastive: bool = True,
    use_masking: bool = True,
) -> Path:
    """Joint optimization of the epoch-level alignment loss and the masked
    sequence loss; validates periodically and early-stops on fused-head
    accuracy."""
    if config.stage != "pretrain":
        raise InputError(f"pretrain_run got config.stage={config.stage!r}")
    cfg = config.model
    params = build_params(cfg, sub_rng(config.seed, "init"))
    if init is not None:
        arrays, meta = dc.load_arrays(init)
        params.load_arrays(arrays, strict=False)
    elif not from_scratch:
        raise StateError("stage-0 checkpoint required (pass from_scratch to skip)")
    model = Model(cfg, params)
    return _run_sequence_training(
        model, ds, config, out,
        stage_name="pretrain",
        log_path=log_path,
        use_contrastive=use_contrastive,
        use_masking=use_masking and config.mask_ratio > 0,
        freeze_backbones=False,
    )


def finetune_run(
    ds: data.Dataset,
    config: TrainConfig,
    init: str | Path,
    out: str | Path,
    log_path: str | Path | None = None,
) -> Path:
    """Frozen-backbone refinement: no masking, no alignment loss, weights
    (1,1,1); epoch features are computed once and reused every step."""
    if config.stage != "finetune":
        raise InputError(f"finetune_run got config.stage={config.stage!r}")
    model = load_model(init)  # raises StateError when missing
    if model.cfg.to_dict() != config.model.to_dict():
        log.warning("finetune model config differs from checkpoint; using checkpoint's")
    model.params.freeze(BACKBONE_PREFIXES)
    return _run_sequence_training(
        model, ds, config, out,
        stage_name="finetune",
        log_path=log_path,
        use_contrastive=False,
        use_masking=False,
        freeze_backbones=True,
    )


def _cache_features(model: Model, ds: data.Dataset, windows, L: int, batch_size: int = 16):
    """Precompute pooled epoch features for frozen backbones (eval mode)."""
    feats_raw, feats_spec, labels = [], [], []
    with dc.no_grad():
        for batch in data.make_sequence_batches(ds, L, batch_size, rng=None, windows=windows):
            raw, spec, lab = data.gather_batch(ds, batch, L)
            B = raw.shape[0]
            fr = model.encode_raw(raw.reshape(B * L, -1)).data.reshape(B, L, -1)
            fs = model.encode_spec(spec.reshape(B * L, *spec.shape[2:])).data.reshape(B, L, -1)
            feats_raw.append(fr)
            feats_spec.append(fs)
            labels.append(lab)
    return np.concatenate(feats_raw), np.concatenate(feats_spec), np.concatenate(labels)


def _run_sequence_training(
    model: Model,
    ds: data.Dataset,
    config: TrainConfig,
    out: str | Path,
    stage_name: str,
    log_path,
    use_contrastive: bool,
    use_masking: bool,
    freeze_backbones: bool,
) -> Path:
    cfg = model.cfg
    L = cfg.seq_len
    train_windows, val_windows = split_windows(ds, L, config.val_fraction, config.seed)
    params = model.params
    state = AdamState(config.lr, config.beta1, config.beta2, weight_decay=config.weight_decay)
    params.zero_grad()
    batch_rng = sub_rng(config.seed, "batches")
    mask_rng = sub_rng(config.seed, "masks")
    drop_rng = sub_rng(config.seed, "dropout")
    aug_rng = sub_rng(config.seed, "augment")
    logger = TrainLog(log_path, config.seed, stage_name)

    cache = None
    if freeze_backbones:
        fr, fs, lab = _cache_features(model, ds, train_windows, L)
        cache = (fr, fs, lab)

    step = 0
    val_history: list[float] = []
    stopped = False
    while step < config.max_steps and not stopped:
        if cache is None:
            batches = data.make_sequence_batches(
                ds, L, config.batch_size, rng=batch_rng, windows=train_windows
            )
            batch_iter = (data.gather_batch(ds, b, L) for b in batches)
        else:
            order = np.arange(cache[2].shape[0])
            batch_rng.shuffle(order)
            batch_iter = (
                (order[i : i + config.batch_size],)
                for i in range(0, order.size, config.batch_size)
            )
        for item in batch_iter:
            if cache is None:
                raw, spec, labels = item
                if config.augment:
                    raw, spec = _augment_batch(raw, spec, aug_rng)
                B = raw.shape[0]
                masks = (None, None)
                if use_masking:
                    masks = _sample_batch_masks(B, L, config, mask_rng)
                out_fwd = model.forward_sequences(
                    raw, spec,
                    mask_raw=masks[0], mask_spec=masks[1],
                    train=True, rng=drop_rng,
                    with_projection=use_contrastive,
                )
            else:
                (idx,) = item
                labels = cache[2][idx]
                feat_raw = Tensor(cache[0][idx])
                feat_spec = Tensor(cache[1][idx])
                B = labels.shape[0]
                out_fwd = model.forward_sequences(
                    np.empty((B, L, 0)), np.empty((B, L, 0)),
                    train=True, rng=drop_rng,
                    with_projection=use_contrastive,
                    cached_features=(feat_raw, feat_spec),
                )
            loss_seq = sequence.sequence_loss(
                out_fwd.logits_raw, out_fwd.logits_spec, out_fwd.logits_fused,
                labels, config.loss_weights,
            )
            # InfoNCE needs in-batch negatives; a trailing batch of one
            # contributes no alignment term
            if use_contrastive and B >= 2:
                loss_epoch = contrastive.info_nce_loss(out_fwd.emb_raw, out_fwd.emb_spec, config.tau)
                total = dc.add(loss_epoch, loss_seq)
                le_val = float(loss_epoch.data)
            else:
                total = loss_seq
                le_val = 0.0
            total.backward()
            adam_step(params, state)
            step += 1

            val_acc = None
            if step % config.validate_every == 0 and val_windows:
                val_acc = _sequence_accuracy(model, ds, val_windows, config.batch_size, L)
                val_history.append(val_acc)
            logger.log(step, le_val, float(loss_seq.data), float(total.data), val_acc)
            if val_acc is not None and should_stop(val_history, config.patience):
                log.info("%s: early stop at step %d (best %.4f)", stage_name, step, max(val_history))
                stopped = True
            if step >= config.max_steps or stopped:
                break

    path = save_model(model, out, stage_name, step, config.seed)
    dc.save_adam(state, str(out) + ".adam")
    return path


# -- ablation harness ----------------------------------------------------------

ABLATION_VARIANTS = (
    "TF_only",
    "CNN_only",
    "TF_CNN_multi",
    "TF_CNN_CL_FT",
    "TF_CNN_M_FT",
    "TF_CNN_PT_CL_M",
    "TF_CNN_PT_CL_M_FT",
)
MASK_SWEEP_RATIOS = (0.15, 0.5, 0.7)


def _epoch_model_accuracy(model: Model, ds: data.Dataset, windows, head: str) -> Metrics:
    """Per-epoch predictions from a stage0-style single-modality model."""
    L = model.cfg.seq_len
    trues, preds = [], []
    p = model.params
    with dc.no_grad():
        for batch in data.make_sequence_batches(ds, L, 8, rng=None, windows=windows):
            raw, spec, labels = data.gather_batch(ds, batch, L)
            B = raw.shape[0]
            if head == "raw":
                feat = model.encode_raw(raw.reshape(B * L, -1))
                logits = dc.affine(feat, p["tmp_head_raw.w"].tensor, p["tmp_head_raw.b"].tensor)
            else:
                feat = model.encode_spec(spec.reshape(B * L, *spec.shape[2:]))
                logits = dc.affine(feat, p["tmp_head_spec.w"].tensor, p["tmp_head_spec.b"].tensor)
            preds.append(logits.data.argmax(-1).reshape(-1))
            trues.append(labels.reshape(-1))
    return compute_metrics(np.concatenate(trues), np.concatenate(preds))


def ablate(
    ds: data.Dataset,
    variants: list[str],
    config: TrainConfig,
    out_dir: str | Path,
    mask_sweep: bool = False,
) -> list[dict]:
    """Train each requested variant with shared data and seeds; write a
    CSV and a plain-text table of accuracy and macro-F1 per variant.

    Metrics are computed on the training windows: the report checks the
    pipeline wiring at desk scale, not generalization.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise InputError(f"unknown ablation variant {v!r}")
    L = config.model.seq_len
    train_windows, _ = split_windows(ds, L, config.val_fraction, config.seed)
    rows = []

    def seq_stage_cfg(stage: str, ratio: float | None = None) -> TrainConfig:
        kw = dict(
            batch_size=config.batch_size, seed=config.seed, model=config.model,
            max_steps=config.max_steps, validate_every=config.validate_every,
            patience=config.patience, lr=config.lr, augment=config.augment and stage == "pretrain",
            val_fraction=config.val_fraction,
        )
        if ratio is not None and stage == "pretrain":
            kw["mask_ratio"] = ratio
        return TrainConfig.for_stage(stage, **kw)

    def run_variant(name: str, ratio: float = 0.5) -> Metrics:
        tag = name if ratio == 0.5 else f"{name}_r{int(round(ratio * 100))}"
        stage0_cfg = seq_stage_cfg("stage0")
        if name in ("TF_only", "CNN_only"):
            model, _ = stage0_train(ds, stage0_cfg)
            return _epoch_model_accuracy(
                model, ds, train_windows, "spec" if name == "TF_only" else "raw"
            )
        s0_path = out_dir / f"{tag}.stage0.ckpt"
        stage0_train(ds, stage0_cfg, out=s0_path)
        pre_cfg = seq_stage_cfg("pretrain", ratio)
        pre_path = out_dir / f"{tag}.pretrain.ckpt"
        use_cl = name in ("TF_CNN_CL_FT", "TF_CNN_PT_CL_M", "TF_CNN_PT_CL_M_FT")
        use_mask = name in ("TF_CNN_M_FT", "TF_CNN_PT_CL_M", "TF_CNN_PT_CL_M_FT")
        if name == "TF_CNN_multi":
            # supervised sequence training only: no alignment, no masking,
            # all three heads weighted equally
            pre_cfg.loss_weights = (1.0, 1.0, 1.0)
            pretrain_run(ds, pre_cfg, s0_path, pre_path, use_contrastive=False, use_masking=False)
            return evaluate(ds, pre_path)
        pretrain_run(ds, pre_cfg, s0_path, pre_path, use_contrastive=use_cl, use_masking=use_mask)
        if name == "TF_CNN_PT_CL_M":
            return evaluate(ds, pre_path)
        ft_cfg = seq_stage_cfg("finetune")
        ft_path = out_dir / f"{tag}.finetune.ckpt"
        finetune_run(ds, ft_cfg, pre_path, ft_path)
        return evaluate(ds, ft_path)

    jobs = [(v, v, 0.5) for v in variants]
    if mask_sweep:
        jobs += [(f"mask_ratio_{r:.2f}", "TF_CNN_PT_CL_M_FT", r) for r in MASK_SWEEP_RATIOS]
    for label, name, ratio in jobs:
        metrics = run_variant(name, ratio)
        rows.append({"variant": label, "accuracy": metrics.accuracy, "macro_f1": metrics.macro_f1})
        log.info("ablation %-24s acc=%.3f mf1=%.3f", label, metrics.accuracy, metrics.macro_f1)

    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "accuracy", "macro_f1"])
        writer.writeheader()
        writer.writerows(rows)
    text = ["variant                    accuracy  macro_f1"]
    for r in rows:
        text.append(f"{r['variant']:<26} {r['accuracy']:8.4f} {r['macro_f1']:9.4f}")
    (out_dir / "ablation.txt").write_text("\n".join(text) + "\n")
    return rows
