"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
PASS lines. The end-to-end overfit (criterion 6) runs the full desk-scale
regimen and takes several minutes; its artifacts feed criterion 7.
"""

import csv
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from sleepfusion import contrastive, data, dsp, sequence, training
from sleepfusion import diffcore as dc
from sleepfusion.config import ModelConfig, TrainConfig, sub_rng
from sleepfusion.diffcore import Tensor, params_hash
from sleepfusion.gradsuite import run_gradient_suite
from sleepfusion.model import BACKBONE_PREFIXES, Model, build_params
from sleepfusion import backbones

_ARTIFACTS: dict = {}


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:2d} FAIL: {title}")
        raise
    print(f"ACCEPTANCE {number:2d} PASS: {title}")


def test_criterion_1_gradient_suite():
    with criterion(1, "gradient suite (ops <= 1e-5, compositions <= 1e-4, < 2 min)"):
        start = time.time()
        report = run_gradient_suite()
        elapsed = time.time() - start
        for name, err, tol in report:
            assert err <= tol, f"{name}: {err:.3e} > {tol:g}"
        assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"


def test_criterion_2_spectrogram_oracle():
    with criterion(2, "spectrogram matches direct DFT oracle; 10 Hz peak at bin 26; < 10 s"):
        start = time.time()
        n = np.arange(dsp.FFT_LEN)
        k = np.arange(dsp.N_BINS)
        dft_matrix = np.exp(-2j * np.pi * np.outer(k, n) / dsp.FFT_LEN)  # direct-sum oracle
        window = np.hamming(dsp.FRAME_LEN)
        rng = np.random.default_rng(7)
        for _ in range(20):
            epoch = rng.standard_normal(3000)
            mags = dsp.frame_magnitudes(epoch)
            for t in range(dsp.N_FRAMES):
                frame = np.zeros(dsp.FFT_LEN)
                frame[: dsp.FRAME_LEN] = epoch[t * dsp.HOP : t * dsp.HOP + dsp.FRAME_LEN] * window
                oracle = np.abs(dft_matrix @ frame)
                np.testing.assert_allclose(mags[t], oracle, atol=1e-5)
        t_axis = np.arange(3000) / dsp.SAMPLE_RATE
        sine_mags = dsp.frame_magnitudes(np.sin(2 * np.pi * 10.0 * t_axis))
        assert np.all(sine_mags.argmax(axis=1) == 26)
        assert time.time() - start < 10.0


def test_criterion_3_closed_form_losses():
    with criterion(3, "InfoNCE = ln B on identical embeddings; uniform sequence losses"):
        for B in (2, 4, 8):
            row = np.zeros(32)
            row[3] = 1.0
            emb = Tensor(np.tile(row, (B, 2, 1)))
            loss = contrastive.info_nce_loss(emb, Tensor(emb.data.copy()), tau=0.1)
            assert abs(loss.item() - math.log(B)) < 1e-6
        zeros = Tensor(np.zeros((3, 21, 5), dtype=np.float64))
        labels = np.zeros((3, 21), dtype=int)
        pre = sequence.sequence_loss(zeros, zeros, zeros, labels, (1.0, 0.1, 0.1))
        fin = sequence.sequence_loss(zeros, zeros, zeros, labels, (1.0, 1.0, 1.0))
        assert abs(pre.item() - 1.2 * math.log(5)) < 1e-6
        assert abs(fin.item() - 3.0 * math.log(5)) < 1e-6


def test_criterion_4_shape_contract():
    with criterion(4, "full-width shape contract"):
        cfg = ModelConfig.paper()
        params = build_params(cfg, sub_rng(0, "init"))
        rng = np.random.default_rng(0)
        with dc.no_grad():
            tokens = backbones.cnn_encode(
                Tensor(rng.standard_normal((2, 1, 3000)).astype(np.float32)), params, cfg
            )
            assert tokens.shape == (2, 5, 128)
            pooled = backbones.epoch_pool(tokens, params, "pool_raw")
            assert pooled.shape == (2, 128)
            spec_tokens = backbones.spec_encode(
                Tensor(rng.standard_normal((2, 29, 129)).astype(np.float32)), params, cfg
            )
            assert spec_tokens.shape == (2, 29, 128)
            pooled_spec = backbones.epoch_pool(spec_tokens, params, "pool_spec")
            assert pooled_spec.shape == (2, 128)
            a = Tensor(rng.standard_normal((2, 21, 128)).astype(np.float32))
            b = Tensor(rng.standard_normal((2, 21, 128)).astype(np.float32))
            t_raw, t_spec = sequence.cross_encode(a, b, params, cfg)
            assert t_raw.shape == (2, 21, 128) and t_spec.shape == (2, 21, 128)


def test_criterion_5_masking_invariants():
    with criterion(5, "mask counts, ratio-0 bitwise equivalence, token gradient"):
        rng = np.random.default_rng(1)
        for ratio, count in ((0.15, 3), (0.5, 11), (0.7, 15)):
            spec = sequence.sample_masks(21, ratio, "independent", rng)
            assert spec.mask_raw.sum() == count and spec.mask_spec.sum() == count
        cfg = ModelConfig.desk()
        model = Model(cfg, build_params(cfg, sub_rng(2, "init")))
        raw = rng.standard_normal((2, 21, 3000)).astype(np.float32)
        specs = rng.standard_normal((2, 21, 29, 129)).astype(np.float32)
        zero_mask = np.zeros((2, 21), dtype=bool)
        with dc.no_grad():
            masked = model.forward_sequences(raw, specs, mask_raw=zero_mask, mask_spec=zero_mask)
            plain = model.forward_sequences(raw, specs)
        for field in ("logits_raw", "logits_spec", "logits_fused"):
            np.testing.assert_array_equal(getattr(masked, field).data, getattr(plain, field).data)
        some_mask = np.zeros((2, 21), dtype=bool)
        some_mask[0, 3] = True
        model.params.zero_grad()
        out = model.forward_sequences(raw, specs, mask_raw=some_mask, mask_spec=some_mask)
        labels = rng.integers(0, 5, (2, 21))
        sequence.sequence_loss(
            out.logits_raw, out.logits_spec, out.logits_fused, labels, (1, 0.1, 0.1)
        ).backward()
        for stream in ("raw", "spec"):
            grad = model.params[f"seq.{stream}.mask_token"].tensor.grad
            assert grad is not None and np.abs(grad).max() > 0.0


def test_criterion_6_end_to_end_overfit(tmp_path):
    with criterion(6, "overfit: train >= 0.95, held-out >= 0.80, < 15 min"):
        start = time.time()
        train_ds = data.generate_synthetic(20, 63, seed=7)  # 60 sequences of L=21
        assert len(data.enumerate_windows(train_ds, 21)) == 60
        held_out = data.generate_synthetic(5, 63, seed=7007)

        training.stage0_train(
            train_ds, TrainConfig.desk("stage0", max_steps=300, seed=7), out=tmp_path / "s0.ckpt"
        )
        training.pretrain_run(
            train_ds, TrainConfig.desk("pretrain", max_steps=2000, seed=7),
            tmp_path / "s0.ckpt", tmp_path / "pretrain.ckpt",
            log_path=tmp_path / "pretrain.csv",
        )
        training.finetune_run(
            train_ds, TrainConfig.desk("finetune", max_steps=500, seed=7),
            tmp_path / "pretrain.ckpt", tmp_path / "finetune.ckpt",
            log_path=tmp_path / "finetune.csv",
        )
        train_metrics = training.evaluate(train_ds, tmp_path / "finetune.ckpt")
        held_metrics = training.evaluate(held_out, tmp_path / "finetune.ckpt")
        elapsed = time.time() - start
        _ARTIFACTS["pretrain_ckpt"] = tmp_path / "pretrain.ckpt"
        _ARTIFACTS["finetune_ckpt"] = tmp_path / "finetune.ckpt"
        _ARTIFACTS["train_acc"] = train_metrics.accuracy
        _ARTIFACTS["held_acc"] = held_metrics.accuracy
        print(
            f"  [train acc {train_metrics.accuracy:.3f}, held-out {held_metrics.accuracy:.3f}, "
            f"{elapsed / 60:.1f} min]"
        )
        assert train_metrics.accuracy >= 0.95
        assert held_metrics.accuracy >= 0.80
        assert elapsed < 900.0, f"pipeline took {elapsed:.0f}s"


def test_criterion_7_freeze_contract():
    with criterion(7, "fine-tuned backbone hash equals pre-train checkpoint hash"):
        assert "pretrain_ckpt" in _ARTIFACTS, "criterion 6 must run first"
        pre = training.load_model(_ARTIFACTS["pretrain_ckpt"])
        fin = training.load_model(_ARTIFACTS["finetune_ckpt"])
        assert params_hash(pre.params, BACKBONE_PREFIXES) == params_hash(
            fin.params, BACKBONE_PREFIXES
        )


def test_criterion_8_ablation_harness(tmp_path):
    with criterion(8, "7 ablation variants + mask-ratio sweep emit well-formed CSV"):
        ds = data.generate_synthetic(8, 63, seed=7)  # 24 sequences
        cfg = TrainConfig.desk("pretrain", max_steps=120, seed=7, validate_every=60)
        rows = training.ablate(
            ds, list(training.ABLATION_VARIANTS), cfg, tmp_path, mask_sweep=True
        )
        assert len(rows) == 7 + 3
        with open(tmp_path / "ablation.csv", newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert [r["variant"] for r in parsed[:7]] == list(training.ABLATION_VARIANTS)
        sweep_labels = [r["variant"] for r in parsed[7:]]
        assert sweep_labels == ["mask_ratio_0.15", "mask_ratio_0.50", "mask_ratio_0.70"]
        for r in parsed:
            acc = float(r["accuracy"])
            mf1 = float(r["macro_f1"])
            assert 0.2 <= acc <= 1.0, f"{r['variant']}: accuracy {acc}"
            assert 0.0 <= mf1 <= 1.0
        assert (tmp_path / "ablation.txt").exists()


def test_criterion_9_container_round_trip(tmp_path):
    with criterion(9, "container write/read bitwise round trip incl. degenerate cases"):
        rng = np.random.default_rng(3)
        cases = [data.Dataset([]), ]
        cases.append(
            data.Dataset(
                [data.Recording("single", rng.standard_normal((1, 3000)).astype(np.float32),
                                np.array([4], dtype=np.uint8))]
            )
        )
        for seed in (1, 2, 3):
            cases.append(data.generate_synthetic(rng.integers(1, 4), rng.integers(1, 30), seed=seed))
        for i, ds in enumerate(cases):
            path = tmp_path / f"case{i}.slpd"
            data.write_dataset(ds, path)
            back = data.read_dataset(path)
            assert len(back.recordings) == len(ds.recordings)
            for a, b in zip(ds.recordings, back.recordings):
                assert a.recording_id == b.recording_id
                np.testing.assert_array_equal(a.epochs, b.epochs)
                np.testing.assert_array_equal(a.labels, b.labels)
            second = tmp_path / f"case{i}b.slpd"
            data.write_dataset(back, second)
            assert path.read_bytes() == second.read_bytes()


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "identically seeded 200-step pretrain runs match bitwise"):
        ds = data.generate_synthetic(10, 42, seed=13)
        training.stage0_train(
            ds, TrainConfig.desk("stage0", max_steps=50, seed=13), out=tmp_path / "s0.ckpt"
        )
        columns = []
        for tag in ("one", "two"):
            training.pretrain_run(
                ds, TrainConfig.desk("pretrain", max_steps=200, seed=13),
                tmp_path / "s0.ckpt", tmp_path / f"{tag}.ckpt",
                log_path=tmp_path / f"{tag}.csv",
            )
            with open(tmp_path / f"{tag}.csv") as fh:
                lines = fh.read().splitlines()
            assert lines[0].startswith("# seed=13")
            losses = [line.split(",")[3] for line in lines[2:]]
            assert len(losses) == 200
            columns.append(losses)
        assert columns[0] == columns[1]
