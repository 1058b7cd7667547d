"""Model and training configuration.

Two model presets exist: "paper" is the full-width architecture; "desk"
is a narrow variant with identical structure for fast end-to-end runs on
one CPU core. Training defaults follow the published recipe (Adam 5e-4,
betas 0.9/0.999, weight decay 1e-5); stage-dependent fields switch with
the stage.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import InputError

STAGES = ("stage0", "pretrain", "finetune")


@dataclass
class ModelConfig:
    preset: str = "paper"
    cnn_channels: tuple[int, ...] = (64, 128, 128, 256, 256)
    convs_per_block: tuple[int, ...] = (2, 2, 3, 3, 3)
    n_heads: int = 8
    d_ff: int = 1024
    backbone_layers: int = 4
    seq_layers: int = 4
    dropout: float = 0.1
    seq_len: int = 21
    n_classes: int = 5
    head_hidden: int = 128

    @property
    def d_model(self) -> int:
        # the final width-2 channel pool halves the last CNN width
        return self.cnn_channels[-1] // 2

    def validate(self) -> "ModelConfig":
        if len(self.cnn_channels) != len(self.convs_per_block):
            raise InputError("cnn_channels and convs_per_block must align")
        if self.cnn_channels[-1] % 2:
            raise InputError("last CNN width must be even (width-2 channel pool)")
        if self.d_model % self.n_heads:
            raise InputError("d_model must be divisible by n_heads")
        return self

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls().validate()

    @classmethod
    def desk(cls) -> "ModelConfig":
        return cls(
            preset="desk",
            cnn_channels=(2, 4, 8, 16, 16),
            convs_per_block=(1, 1, 2, 2, 2),
            n_heads=2,
            d_ff=32,
            backbone_layers=2,
            seq_layers=2,
            head_hidden=16,
        ).validate()

    @classmethod
    def from_preset(cls, name: str) -> "ModelConfig":
        if name == "paper":
            return cls.paper()
        if name == "desk":
            return cls.desk()
        raise InputError(f"unknown model preset {name!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("cnn_channels", "convs_per_block"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validate()


_STAGE_WEIGHTS = {"stage0": (1.0, 1.0, 1.0), "pretrain": (1.0, 0.1, 0.1), "finetune": (1.0, 1.0, 1.0)}


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-5
    batch_size: int = 32
    mask_ratio: float = 0.5
    mask_mode: str = "independent"
    tau: float = 0.1
    loss_weights: tuple[float, float, float] = (1.0, 0.1, 0.1)
    validate_every: int = 100
    patience: int = 1000
    max_steps: int = 2000
    seed: int = 0
    augment: bool = True
    val_fraction: float = 0.1
    model: ModelConfig = field(default_factory=ModelConfig.paper)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise InputError(f"unknown stage {self.stage!r}")
        if self.stage == "finetune":
            # fine-tuning never masks and always freezes the epoch encoders
            self.mask_ratio = 0.0
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise InputError("mask_ratio must lie in [0,1]")
        if self.tau <= 0:
            raise InputError("tau must be positive")
        if self.patience < 1:
            raise InputError("patience must be >= 1")

    @classmethod
    def for_stage(cls, stage: str, **overrides) -> "TrainConfig":
        # augmentation exists for the contrastive objective; only the
        # pre-training stage uses it unless explicitly overridden
        kw = {"stage": stage, "loss_weights": _STAGE_WEIGHTS[stage], "augment": stage == "pretrain"}
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def desk(cls, stage: str, **overrides) -> "TrainConfig":
        kw = dict(
            stage=stage,
            loss_weights=_STAGE_WEIGHTS[stage],
            batch_size=32 if stage == "stage0" else 4,
            patience=20,
            augment=stage == "pretrain",
            model=ModelConfig.desk(),
        )
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = ModelConfig.from_dict(d["model"])
        if "loss_weights" in d:
            d["loss_weights"] = tuple(d["loss_weights"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "TrainConfig":
        raw = json.loads(Path(path).read_text())
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)


def sub_rng(seed: int, stream: str) -> "np.random.Generator":
    """Named deterministic generator derived from the single run seed."""
    import numpy as np

    streams = {"data": 0, "init": 1, "masks": 2, "dropout": 3, "augment": 4, "batches": 5, "split": 6}
    if stream not in streams:
        raise InputError(f"unknown rng stream {stream!r}")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(streams[stream],)))
