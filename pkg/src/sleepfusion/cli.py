"""Command-line entry point.

Subcommands: synth, spectrogram, stage0, pretrain, finetune, eval, ablate,
gradcheck, describe. Global flags: --config (JSON TrainConfig), --seed,
--out, --log. Flag values override config-file values which override
defaults. Exit codes: 0 success, 1 usage error, 2 runtime/format error.
Errors print one line: ``error: <category>: <detail>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, dsp, training
from .config import ModelConfig, TrainConfig
from .errors import SleepFusionError, StateError

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _train_config(args, stage: str) -> TrainConfig:
    overrides = {}
    for key in ("seed", "batch_size", "steps", "mask_ratio", "lr", "patience",
                "validate_every", "tau", "preset"):
        val = getattr(args, key, None)
        if val is None:
            continue
        if key == "steps":
            overrides["max_steps"] = val
        elif key == "preset":
            overrides["model"] = ModelConfig.from_preset(val)
        else:
            overrides[key] = val
    if getattr(args, "config", None):
        cfg = TrainConfig.load(args.config, stage=stage, **overrides)
    else:
        cfg = TrainConfig.desk(stage, **overrides) if overrides.get("model", ModelConfig.desk()).preset == "desk" \
            else TrainConfig.for_stage(stage, **overrides)
    return cfg


def _add_common(p, with_data=True):
    p.add_argument("--config", help="JSON config file (TrainConfig fields)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory or file")
    p.add_argument("--log", help="training log CSV path")
    if with_data:
        p.add_argument("--data", required=True, help="dataset container (.slpd or .csv)")


def build_parser() -> _Parser:
    parser = _Parser(prog="sleepfusion", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset container")
    p.add_argument("--recordings", type=int, required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("spectrogram", help="write spectrogram sidecar for a container")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="sidecar stem; writes <out>.bin and <out>.json")

    for stage in ("stage0", "pretrain", "finetune"):
        p = sub.add_parser(stage, help=f"run the {stage} training stage")
        _add_common(p)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--patience", type=int, default=None)
        p.add_argument("--validate-every", dest="validate_every", type=int, default=None)
        p.add_argument("--preset", choices=("paper", "desk"), default=None)
        if stage == "pretrain":
            p.add_argument("--init", help="stage0 checkpoint")
            p.add_argument("--from-scratch", action="store_true")
            p.add_argument("--mask-ratio", dest="mask_ratio", type=float, default=None)
            p.add_argument("--tau", type=float, default=None)
        if stage == "finetune":
            p.add_argument("--init", required=True, help="pretrain checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="metrics JSON path (stdout when omitted)")

    p = sub.add_parser("ablate", help="run ablation variants and emit a report")
    _add_common(p)
    p.add_argument("--variants", default=",".join(training.ABLATION_VARIANTS),
                   help="comma-separated variant names")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--preset", choices=("paper", "desk"), default=None)
    p.add_argument("--mask-sweep", action="store_true",
                   help="also sweep mask ratios 15/50/70 percent")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and composition")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--composition-tolerance", type=float, default=1e-4)

    p = sub.add_parser("describe", help="dump the model layer table as JSON")
    p.add_argument("--preset", choices=("paper", "desk"), default="paper")
    p.add_argument("--out", help="JSON path (stdout when omitted)")
    return parser


def cmd_synth(args) -> int:
    ds = data.generate_synthetic(args.recordings, args.epochs, args.seed)
    data.write_dataset(ds, args.out)
    print(f"wrote {ds.n_epochs()} epochs in {len(ds.recordings)} recordings to {args.out}")
    return 0


def cmd_spectrogram(args) -> int:
    ds = data.load_dataset(args.data)
    ds.prepare()
    specs = [ds.spectrograms(i) for i in range(len(ds.recordings))]
    stacked = (
        np.concatenate(specs) if specs
        else np.zeros((0, dsp.N_FRAMES, dsp.N_BINS), dtype=np.float32)
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out) + ".bin").write_bytes(stacked.astype("<f4").tobytes())
    header = {"n": int(stacked.shape[0]), "frames": dsp.N_FRAMES, "bins": dsp.N_BINS}
    Path(str(out) + ".json").write_text(json.dumps(header))
    print(f"wrote {stacked.shape[0]} spectrograms to {out}.bin")
    return 0


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else Path(".")


def cmd_stage(args, stage: str) -> int:
    cfg = _train_config(args, stage)
    ds = data.load_dataset(args.data)
    out_dir = _out_dir(args)
    log_path = args.log or out_dir / f"{stage}.log.csv"
    if stage == "stage0":
        _, info = training.stage0_train(ds, cfg, out=out_dir / "stage0.ckpt", log_path=log_path)
        print(f"stage0 done: {info['steps']} steps, final loss {info['final_loss']:.4f}")
    elif stage == "pretrain":
        init = getattr(args, "init", None)
        path = training.pretrain_run(
            ds, cfg, init, out_dir / "pretrain.ckpt",
            from_scratch=getattr(args, "from_scratch", False), log_path=log_path,
        )
        print(f"pretrain checkpoint: {path}")
    else:
        path = training.finetune_run(ds, cfg, args.init, out_dir / "finetune.ckpt", log_path=log_path)
        print(f"finetune checkpoint: {path}")
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).exists():
        raise StateError(f"checkpoint not found: {args.checkpoint}")
    ds = data.load_dataset(args.data)
    metrics = training.evaluate(ds, args.checkpoint)
    payload = json.dumps(metrics.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def cmd_ablate(args) -> int:
    cfg = _train_config(args, "pretrain")
    ds = data.load_dataset(args.data)
    variants = [v for v in args.variants.split(",") if v]
    rows = training.ablate(ds, variants, cfg, _out_dir(args), mask_sweep=args.mask_sweep)
    for r in rows:
        print(f"{r['variant']:<26} acc={r['accuracy']:.4f} mf1={r['macro_f1']:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    report = run_gradient_suite()
    failed = False
    for name, err, tol in report:
        status = "ok" if err <= tol else "FAIL"
        if err > tol:
            failed = True
        print(f"{name:<38} max_rel_err={err:.3e}  tol={tol:.0e}  {status}")
    if failed:
        print("error: evaluation: gradient check exceeded tolerance", file=sys.stderr)
        return RUNTIME_EXIT
    return 0


def cmd_describe(args) -> int:
    from . import backbones

    cfg = ModelConfig.from_preset(args.preset)
    table = []
    for entry in backbones.cnn_layer_table(cfg):
        count = entry["c_out"] * entry["c_in"] * entry["kernel"] + entry["c_out"]
        table.append({**entry, "params": count})
    from .config import sub_rng
    from .model import build_params

    params = build_params(cfg, sub_rng(0, "init"))
    groups: dict[str, int] = {}
    for p in params:
        group = p.name.split(".")[0]
        groups[group] = groups.get(group, 0) + p.tensor.size
    payload = json.dumps(
        {
            "preset": args.preset,
            "d_model": cfg.d_model,
            "cnn_layers": table,
            "group_param_counts": groups,
            "total_params": params.count(),
        },
        indent=1,
    )
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except SystemExit as exc:  # --help paths
        return int(exc.code or 0)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "spectrogram":
            return cmd_spectrogram(args)
        if args.command in ("stage0", "pretrain", "finetune"):
            return cmd_stage(args, args.command)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "describe":
            return cmd_describe(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except SleepFusionError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except _UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return USAGE_EXIT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
