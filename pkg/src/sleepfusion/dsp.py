"""Signal conditioning: log-magnitude spectrograms and label-preserving
augmentations for 30 s, 100 Hz single-channel epochs.

An epoch is 3000 samples. Spectrogram frames are 200 samples with hop 100
(29 frames), Hamming-windowed, zero-padded to 256, and reduced to the
one-sided 129-bin magnitude spectrum. Values are log-compressed and then
standardized per epoch.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import InputError

SAMPLE_RATE = 100
EPOCH_SAMPLES = 3000
FRAME_LEN = 200
HOP = 100
FFT_LEN = 256
N_FRAMES = 29
N_BINS = FFT_LEN // 2 + 1  # 129
LOG_FLOOR = 1e-6


class AugmentKind(Enum):
    AMPLITUDE_SCALE = "amplitude_scale"
    AMPLITUDE_SHIFT = "amplitude_shift"
    GAUSSIAN_NOISE = "gaussian_noise"
    BAND_STOP = "band_stop"
    TIME_SHIFT = "time_shift"
    ZERO_MASK = "zero_mask"
    RANDOM_NOISE = "random_noise"  # spectrogram-only


RAW_KINDS = (
    AugmentKind.AMPLITUDE_SCALE,
    AugmentKind.AMPLITUDE_SHIFT,
    AugmentKind.GAUSSIAN_NOISE,
    AugmentKind.BAND_STOP,
    AugmentKind.TIME_SHIFT,
    AugmentKind.ZERO_MASK,
)


def _check_epoch(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.shape != (EPOCH_SAMPLES,):
        raise InputError(f"epoch must have exactly {EPOCH_SAMPLES} samples, got {samples.shape}")
    return samples


def zscore_normalize(samples: np.ndarray) -> np.ndarray:
    """(x - mean) / max(std, 1e-8), per epoch.

    Statistics run in float64: float32 accumulation can report a nonzero
    spread for constant inputs.
    """
    x = np.asarray(samples, dtype=np.float64)
    mu = x.mean()
    sd = x.std()
    return ((x - mu) / max(sd, 1e-8)).astype(np.float32)


def frame_magnitudes(samples: np.ndarray) -> np.ndarray:
    """Pre-log one-sided magnitude spectra, [29,129] float64."""
    x = _check_epoch(samples).astype(np.float64)
    window = np.hamming(FRAME_LEN)
    frames = np.stack([x[t * HOP : t * HOP + FRAME_LEN] for t in range(N_FRAMES)])
    spec = np.fft.rfft(frames * window, n=FFT_LEN, axis=1)
    return np.abs(spec)


def stft_spectrogram(samples: np.ndarray) -> np.ndarray:
    """Standardized log-magnitude spectrogram, [29,129] float32."""
    mag = frame_magnitudes(samples)
    logmag = np.log(mag + LOG_FLOOR)
    mu = logmag.mean()
    sd = logmag.std()
    return ((logmag - mu) / max(sd, 1e-8)).astype(np.float32)


def spectrogram_batch(epochs: np.ndarray) -> np.ndarray:
    """Vectorized stft_spectrogram over [N,3000] -> [N,29,129] float32."""
    epochs = np.asarray(epochs, dtype=np.float64)
    if epochs.ndim != 2 or epochs.shape[1] != EPOCH_SAMPLES:
        raise InputError(f"expected [N,{EPOCH_SAMPLES}], got {epochs.shape}")
    window = np.hamming(FRAME_LEN)
    idx = np.arange(N_FRAMES)[:, None] * HOP + np.arange(FRAME_LEN)[None, :]
    frames = epochs[:, idx] * window  # [N,29,200]
    mag = np.abs(np.fft.rfft(frames, n=FFT_LEN, axis=2))
    logmag = np.log(mag + LOG_FLOOR)
    mu = logmag.mean(axis=(1, 2), keepdims=True)
    sd = logmag.std(axis=(1, 2), keepdims=True)
    return ((logmag - mu) / np.maximum(sd, 1e-8)).astype(np.float32)


# -- raw-signal augmentations ---------------------------------------------
#
# Each transform is exposed with explicit parameters so tests can pin the
# null value; augment_raw draws the parameters from the provided generator.


def amplitude_scale(x: np.ndarray, factor: float) -> np.ndarray:
    return (np.asarray(x, dtype=np.float32) * np.float32(factor)).astype(np.float32)


def amplitude_shift(x: np.ndarray, shift_in_stds: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return x + np.float32(shift_in_stds * x.std())


def gaussian_noise(x: np.ndarray, sigma_in_stds: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if sigma_in_stds == 0.0:
        return x.copy()
    noise = rng.normal(0.0, sigma_in_stds * float(x.std()), size=x.shape)
    return (x + noise).astype(np.float32)


def band_stop(x: np.ndarray, f_lo: float, f_hi: float) -> np.ndarray:
    """Zero all FFT bins with frequency in [f_lo, f_hi] Hz."""
    x = np.asarray(x, dtype=np.float64)
    if f_hi < f_lo:
        raise InputError("band_stop: f_hi < f_lo")
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / SAMPLE_RATE)
    spec[(freqs >= f_lo) & (freqs <= f_hi)] = 0.0
    return np.fft.irfft(spec, n=x.size).astype(np.float32)


def time_shift(x: np.ndarray, samples: int) -> np.ndarray:
    return np.roll(np.asarray(x, dtype=np.float32), samples)


def zero_mask(x: np.ndarray, start: int, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32).copy()
    if length < 0 or start < 0 or start + length > x.size:
        raise InputError("zero_mask segment out of range")
    x[start : start + length] = 0.0
    return x


def augment_raw(epoch: np.ndarray, kind: AugmentKind, rng: np.random.Generator) -> np.ndarray:
    """Apply one randomly parameterized raw-signal augmentation."""
    x = _check_epoch(epoch)
    if kind not in RAW_KINDS:
        raise InputError(f"{kind} is not a raw-signal augmentation")
    if kind is AugmentKind.AMPLITUDE_SCALE:
        return amplitude_scale(x, rng.uniform(0.8, 1.2))
    if kind is AugmentKind.AMPLITUDE_SHIFT:
        return amplitude_shift(x, rng.uniform(-0.1, 0.1))
    if kind is AugmentKind.GAUSSIAN_NOISE:
        return gaussian_noise(x, 0.05, rng)
    if kind is AugmentKind.BAND_STOP:
        lo = rng.uniform(0.5, 43.0)
        return band_stop(x, lo, lo + 2.0)
    if kind is AugmentKind.TIME_SHIFT:
        return time_shift(x, int(rng.integers(-300, 301)))
    start_max = EPOCH_SAMPLES - 300
    length = int(rng.integers(0, 301))
    start = int(rng.integers(0, start_max + 1))
    return zero_mask(x, start, length)


def random_raw_augment(epoch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Pick one of the six raw schemes uniformly and apply it."""
    kind = RAW_KINDS[int(rng.integers(0, len(RAW_KINDS)))]
    return augment_raw(epoch, kind, rng)


def augment_spec(spec: np.ndarray, rng: np.random.Generator, sigma: float = 0.05) -> np.ndarray:
    """Add i.i.d. Gaussian noise per cell (values are in standardized units)."""
    spec = np.asarray(spec, dtype=np.float32)
    if sigma == 0.0:
        return spec.copy()
    return (spec + rng.normal(0.0, sigma, size=spec.shape)).astype(np.float32)


# -- 125 Hz ingestion ------------------------------------------------------


def _lowpass_fir(cutoff_norm: float, taps: int = 129) -> np.ndarray:
    """Hamming-windowed sinc low-pass; cutoff as a fraction of Nyquist."""
    n = np.arange(taps) - (taps - 1) / 2.0
    h = cutoff_norm * np.sinc(cutoff_norm * n)
    h *= np.hamming(taps)
    return h / h.sum()


def resample_125_to_100(x: np.ndarray) -> np.ndarray:
    """Rational 4/5 polyphase resampling with a linear-phase low-pass."""
    x = np.asarray(x, dtype=np.float64)
    up, down = 4, 5
    upsampled = np.zeros(x.size * up)
    upsampled[::up] = x * up  # gain compensation for inserted zeros
    # intermediate rate 500 Hz; keep everything below the output Nyquist (50 Hz)
    h = _lowpass_fir(cutoff_norm=1.0 / down, taps=251)
    filtered = np.convolve(upsampled, h, mode="same")
    return filtered[::down].astype(np.float32)
