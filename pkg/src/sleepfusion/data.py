"""Dataset container, synthetic EEG generation, and sequence batching.

Stages are integers 0..4 in the fixed order Wake, NREM1, NREM2, NREM3,
REM. A recording is an ordered run of 30 s epochs; sequence samples are
contiguous windows of L epochs (L = 21 by default).

On-disk container ("SLPD", little-endian):
    magic "SLPD" | version u16 | recording_count u32
    per recording: id_len u16 | id utf-8 | epoch_count u32
                   | epochs: 3000 f32 + label u8
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .errors import FormatError, InputError

log = logging.getLogger(__name__)

SEQ_LEN = 21
N_CLASSES = 5
STAGE_NAMES = ("Wake", "NREM1", "NREM2", "NREM3", "REM")

MAGIC = b"SLPD"
VERSION = 1

# stage adjacency for the synthetic transition model: Wake-N1-N2-N3 chain
# plus the N2-REM link; leftover probability mass splits evenly over neighbors
_NEIGHBORS = {0: (1,), 1: (0, 2), 2: (1, 3, 4), 3: (2,), 4: (2,)}
_P_STAY = 0.85


@dataclass
class Recording:
    recording_id: str
    epochs: np.ndarray  # [n,3000] float32
    labels: np.ndarray  # [n] uint8

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.epochs.ndim != 2 or self.epochs.shape[1] != dsp.EPOCH_SAMPLES:
            raise InputError(f"recording epochs must be [n,{dsp.EPOCH_SAMPLES}]")
        if self.labels.shape != (self.epochs.shape[0],):
            raise InputError("labels length must match epoch count")
        if self.labels.size and self.labels.max() >= N_CLASSES:
            raise InputError("labels must lie in 0..4")

    def __len__(self):
        return self.epochs.shape[0]


@dataclass
class Dataset:
    recordings: list[Recording]
    sample_rate: int = dsp.SAMPLE_RATE
    source: str = "unknown"
    # caches built by prepare(): z-scored raw and standardized spectrograms
    _normalized: list[np.ndarray] = field(default_factory=list, repr=False)
    _spectrograms: list[np.ndarray] = field(default_factory=list, repr=False)

    def n_epochs(self) -> int:
        return sum(len(r) for r in self.recordings)

    def prepare(self) -> "Dataset":
        """Compute per-epoch z-scored raw and cached spectrograms once."""
        if self._normalized:
            return self
        for rec in self.recordings:
            if len(rec) == 0:
                self._normalized.append(rec.epochs.copy())
                self._spectrograms.append(
                    np.zeros((0, dsp.N_FRAMES, dsp.N_BINS), dtype=np.float32)
                )
                continue
            wide = rec.epochs.astype(np.float64)
            mu = wide.mean(axis=1, keepdims=True)
            sd = np.maximum(wide.std(axis=1, keepdims=True), 1e-8)
            normalized = ((wide - mu) / sd).astype(np.float32)
            self._normalized.append(normalized)
            self._spectrograms.append(dsp.spectrogram_batch(normalized))
        return self

    def normalized(self, rec_idx: int) -> np.ndarray:
        self.prepare()
        return self._normalized[rec_idx]

    def spectrograms(self, rec_idx: int) -> np.ndarray:
        self.prepare()
        return self._spectrograms[rec_idx]


# -- synthetic generation ---------------------------------------------------


def _stage_sequence(n: int, rng: np.random.Generator) -> np.ndarray:
    stages = np.empty(n, dtype=np.uint8)
    state = int(rng.integers(0, N_CLASSES))
    for i in range(n):
        stages[i] = state
        if rng.random() >= _P_STAY:
            nbrs = _NEIGHBORS[state]
            state = nbrs[int(rng.integers(0, len(nbrs)))]
    return stages


def _band_mix(
    t: np.ndarray, f_lo: float, f_hi: float, n_components: int, rng: np.random.Generator
) -> np.ndarray:
    """Sum of sinusoids with one frequency per equal sub-band, unit std."""
    edges = np.linspace(f_lo, f_hi, n_components + 1)
    sig = np.zeros_like(t)
    for k in range(n_components):
        f = rng.uniform(edges[k], edges[k + 1])
        phase = rng.uniform(0.0, 2.0 * np.pi)
        sig += np.sin(2.0 * np.pi * f * t + phase)
    sd = sig.std()
    return sig / sd if sd > 0 else sig


def _synth_epoch(stage: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(dsp.EPOCH_SAMPLES) / dsp.SAMPLE_RATE
    if stage == 0:  # Wake: fast beta-range mix
        sig = 1.0 * _band_mix(t, 20.0, 30.0, 3, rng)
    elif stage == 1:  # NREM1: theta
        sig = 0.7 * _band_mix(t, 4.0, 7.0, 3, rng)
    elif stage == 2:  # NREM2: theta carrier with periodic spindle bursts
        carrier = 0.6 * _band_mix(t, 4.0, 7.0, 2, rng)
        spindle_f = rng.uniform(11.0, 15.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        spindles = np.sin(2.0 * np.pi * spindle_f * t + phase)
        # 1 s bursts every 3 s
        envelope = ((t % 3.0) < 1.0).astype(np.float64)
        sig = carrier + 1.0 * spindles * envelope
    elif stage == 3:  # NREM3: slow delta, large amplitude
        sig = 2.0 * _band_mix(t, 0.5, 2.0, 2, rng)
    else:  # REM: theta-alpha boundary mix, stratified so the top band is hit
        sig = 0.9 * _band_mix(t, 4.0, 8.0, 4, rng)
    sig = sig + rng.normal(0.0, 0.1, size=t.shape)
    return sig.astype(np.float32)


def generate_synthetic(n_recordings: int, epochs_per_recording: int, seed: int) -> Dataset:
    """Deterministic stage-separable synthetic dataset."""
    if n_recordings < 1 or epochs_per_recording < 1:
        raise InputError("sizes must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    recordings = []
    for r in range(n_recordings):
        labels = _stage_sequence(epochs_per_recording, rng)
        epochs = np.stack([_synth_epoch(int(s), rng) for s in labels])
        recordings.append(Recording(f"synthetic-{seed}-{r:03d}", epochs, labels))
    return Dataset(recordings, source=f"synthetic(seed={seed})")


# -- container i/o ----------------------------------------------------------


def write_dataset(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(ds.recordings)))
        for rec in ds.recordings:
            ident = rec.recording_id.encode("utf-8")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<I", len(rec)))
            for i in range(len(rec)):
                fh.write(rec.epochs[i].astype("<f4").tobytes())
                fh.write(struct.pack("<B", int(rec.labels[i])))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated {what} at offset {self.pos}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"dataset file not found: {path}")
    r = _Reader(path.read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic at offset 0")
    (version,) = struct.unpack("<H", r.take(2, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    (n_rec,) = struct.unpack("<I", r.take(4, "recording count"))
    recordings = []
    epoch_bytes = dsp.EPOCH_SAMPLES * 4
    for _ in range(n_rec):
        (id_len,) = struct.unpack("<H", r.take(2, "id length"))
        ident = r.take(id_len, "recording id").decode("utf-8")
        (n_ep,) = struct.unpack("<I", r.take(4, "epoch count"))
        raw = r.take(n_ep * (epoch_bytes + 1), f"epochs of {ident}")
        epochs = np.empty((n_ep, dsp.EPOCH_SAMPLES), dtype=np.float32)
        labels = np.empty(n_ep, dtype=np.uint8)
        for i in range(n_ep):
            base = i * (epoch_bytes + 1)
            epochs[i] = np.frombuffer(raw[base : base + epoch_bytes], dtype="<f4")
            labels[i] = raw[base + epoch_bytes]
        recordings.append(Recording(ident, epochs, labels))
    if r.pos != len(r.blob):
        raise FormatError(f"trailing bytes at offset {r.pos}")
    return Dataset(recordings, source=str(path))


def read_csv_dataset(path: str | Path, recording_id: str = "csv") -> Dataset:
    """Fixture ingestion: each row is 3000 floats followed by a label."""
    path = Path(path)
    epochs, labels = [], []
    with open(path, newline="") as fh:
        for row_num, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) != dsp.EPOCH_SAMPLES + 1:
                raise FormatError(
                    f"csv row {row_num} has {len(row)} fields, expected {dsp.EPOCH_SAMPLES + 1}"
                )
            epochs.append(np.array(row[:-1], dtype=np.float32))
            labels.append(int(row[-1]))
    if not epochs:
        return Dataset([], source=str(path))
    rec = Recording(recording_id, np.stack(epochs), np.array(labels, dtype=np.uint8))
    return Dataset([rec], source=str(path))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_dataset(path)
    return read_dataset(path)


# -- sequence batching -------------------------------------------------------


@dataclass
class SequenceWindow:
    rec_idx: int
    start: int


def enumerate_windows(ds: Dataset, L: int = SEQ_LEN, stride: int | None = None) -> list[SequenceWindow]:
    """Non-overlapping (stride = L) windows per recording; short ones warn."""
    if L < 1:
        raise InputError("L must be >= 1")
    stride = L if stride is None else stride
    if stride < 1 or stride > L:
        raise InputError("stride must lie in [1, L]")
    windows = []
    for idx, rec in enumerate(ds.recordings):
        n = len(rec)
        if n < L:
            log.warning("recording %s has %d epochs (< L=%d); skipped", rec.recording_id, n, L)
            continue
        for start in range(0, n - L + 1, stride):
            windows.append(SequenceWindow(idx, start))
    return windows


def make_sequence_batches(
    ds: Dataset,
    L: int = SEQ_LEN,
    batch_size: int = 4,
    rng: np.random.Generator | None = None,
    windows: list[SequenceWindow] | None = None,
):
    """Yield shuffled batches of windows; the final partial batch is kept."""
    if batch_size < 1:
        raise InputError("batch size must be >= 1")
    if windows is None:
        windows = enumerate_windows(ds, L)
    if not windows:
        raise InputError(f"no recording reaches length L={L}")
    order = np.arange(len(windows))
    if rng is not None:
        rng.shuffle(order)
    for i in range(0, len(order), batch_size):
        yield [windows[j] for j in order[i : i + batch_size]]


def gather_batch(ds: Dataset, batch: list[SequenceWindow], L: int = SEQ_LEN):
    """Materialize (raw [B,L,3000], spec [B,L,29,129], labels [B,L]) arrays."""
    ds.prepare()
    raw = np.stack([ds.normalized(w.rec_idx)[w.start : w.start + L] for w in batch])
    spec = np.stack([ds.spectrograms(w.rec_idx)[w.start : w.start + L] for w in batch])
    labels = np.stack(
        [ds.recordings[w.rec_idx].labels[w.start : w.start + L] for w in batch]
    ).astype(np.int64)
    return raw, spec, labels
