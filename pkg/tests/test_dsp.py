"""Spectrogram pipeline against a direct DFT oracle, plus augmentations."""

import numpy as np
import pytest

from sleepfusion import dsp
from sleepfusion.errors import InputError


def naive_frame_dft(frame200: np.ndarray) -> np.ndarray:
    """O(N^2) direct DFT of one Hamming-windowed, zero-padded frame."""
    padded = np.zeros(dsp.FFT_LEN)
    padded[: dsp.FRAME_LEN] = frame200 * np.hamming(dsp.FRAME_LEN)
    n = np.arange(dsp.FFT_LEN)
    mags = np.empty(dsp.N_BINS)
    for k in range(dsp.N_BINS):
        mags[k] = np.abs(np.sum(padded * np.exp(-2j * np.pi * k * n / dsp.FFT_LEN)))
    return mags


class TestSpectrogram:
    def test_zero_epoch_standardizes_to_zero(self):
        out = dsp.stft_spectrogram(np.zeros(3000, dtype=np.float32))
        assert out.shape == (29, 129)
        np.testing.assert_array_equal(out, 0.0)

    def test_output_shape(self):
        x = np.random.default_rng(0).standard_normal(3000).astype(np.float32)
        assert dsp.stft_spectrogram(x).shape == (29, 129)

    def test_sine_10hz_peaks_at_bin_26(self):
        t = np.arange(3000) / dsp.SAMPLE_RATE
        sine = np.sin(2 * np.pi * 10.0 * t)
        mags = dsp.frame_magnitudes(sine)
        assert np.all(mags.argmax(axis=1) == 26)

    def test_matches_naive_dft_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(3):
            x = rng.standard_normal(3000)
            mags = dsp.frame_magnitudes(x)
            for frame_idx in (0, 13, 28):
                frame = x[frame_idx * dsp.HOP : frame_idx * dsp.HOP + dsp.FRAME_LEN]
                np.testing.assert_allclose(mags[frame_idx], naive_frame_dft(frame), atol=1e-5)

    def test_parseval_one_sided(self):
        x = np.random.default_rng(2).standard_normal(3000)
        mags = dsp.frame_magnitudes(x)
        frame = x[:200] * np.hamming(200)
        time_energy = np.sum(frame**2)
        sq = mags[0] ** 2
        freq_energy = (sq[0] + sq[-1] + 2 * sq[1:-1].sum()) / dsp.FFT_LEN
        assert abs(freq_energy - time_energy) / time_energy < 1e-4

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        epochs = rng.standard_normal((4, 3000)).astype(np.float32)
        batch = dsp.spectrogram_batch(epochs)
        for i in range(4):
            np.testing.assert_array_equal(batch[i], dsp.stft_spectrogram(epochs[i]))

    def test_wrong_length_rejected(self):
        with pytest.raises(InputError):
            dsp.stft_spectrogram(np.zeros(2999))


class TestZscore:
    def test_constant_input_zeroed(self):
        np.testing.assert_array_equal(dsp.zscore_normalize(np.full(3000, 4.2)), 0.0)

    def test_plus_minus_one_fixed_point(self):
        np.testing.assert_allclose(dsp.zscore_normalize(np.array([-1.0, 1.0])), [-1.0, 1.0])

    def test_moments(self):
        x = np.random.default_rng(4).standard_normal(3000) * 7 + 3
        z = dsp.zscore_normalize(x)
        assert abs(z.mean()) < 1e-6
        assert abs(z.std() - 1.0) < 1e-4


class TestRawAugmentations:
    def setup_method(self):
        rng = np.random.default_rng(5)
        t = np.arange(3000) / dsp.SAMPLE_RATE
        self.t = t
        self.x = (np.sin(2 * np.pi * 11.0 * t) + 0.1 * rng.standard_normal(3000)).astype(np.float32)

    def test_null_parameters_are_identity(self):
        np.testing.assert_array_equal(dsp.amplitude_scale(self.x, 1.0), self.x)
        np.testing.assert_array_equal(dsp.amplitude_shift(self.x, 0.0), self.x)
        np.testing.assert_array_equal(
            dsp.gaussian_noise(self.x, 0.0, np.random.default_rng(0)), self.x
        )
        np.testing.assert_array_equal(dsp.time_shift(self.x, 0), self.x)
        np.testing.assert_array_equal(dsp.zero_mask(self.x, 100, 0), self.x)

    def test_band_stop_removes_band_energy(self):
        sine = np.sin(2 * np.pi * 11.0 * self.t).astype(np.float32)
        out = dsp.band_stop(sine, 10.0, 12.0)
        freqs = np.fft.rfftfreq(3000, d=1.0 / dsp.SAMPLE_RATE)
        band = (freqs >= 10.0) & (freqs <= 12.0)
        before = (np.abs(np.fft.rfft(sine.astype(np.float64))) ** 2)[band].sum()
        after = (np.abs(np.fft.rfft(out.astype(np.float64))) ** 2)[band].sum()
        assert after < 1e-3 * before

    def test_all_kinds_preserve_length_and_finiteness(self):
        rng = np.random.default_rng(6)
        for kind in dsp.RAW_KINDS:
            out = dsp.augment_raw(self.x, kind, rng)
            assert out.shape == (3000,)
            assert np.all(np.isfinite(out))

    def test_same_seed_same_output(self):
        for kind in dsp.RAW_KINDS:
            a = dsp.augment_raw(self.x, kind, np.random.default_rng(42))
            b = dsp.augment_raw(self.x, kind, np.random.default_rng(42))
            np.testing.assert_array_equal(a, b)

    def test_spec_kind_rejected_for_raw(self):
        with pytest.raises(InputError):
            dsp.augment_raw(self.x, dsp.AugmentKind.RANDOM_NOISE, np.random.default_rng(0))

    def test_time_shift_is_circular(self):
        out = dsp.time_shift(self.x, 300)
        np.testing.assert_array_equal(out[300:], self.x[:-300])
        np.testing.assert_array_equal(out[:300], self.x[-300:])


class TestSpecAugment:
    def test_sigma_zero_identity(self):
        spec = dsp.stft_spectrogram(np.random.default_rng(7).standard_normal(3000))
        out = dsp.augment_spec(spec, np.random.default_rng(0), sigma=0.0)
        np.testing.assert_array_equal(out, spec)

    def test_shape_unchanged(self):
        spec = np.zeros((29, 129), dtype=np.float32)
        assert dsp.augment_spec(spec, np.random.default_rng(1)).shape == (29, 129)

    def test_noise_std_monte_carlo(self):
        rng = np.random.default_rng(8)
        spec = np.zeros((29, 129), dtype=np.float32)
        diffs = np.concatenate([dsp.augment_spec(spec, rng).ravel() for _ in range(3)])
        assert diffs.size > 10_000
        assert 0.045 <= diffs.std() <= 0.055


class TestResample:
    def test_sine_resampled_4_over_5(self):
        t125 = np.arange(3750) / 125.0
        out = dsp.resample_125_to_100(np.sin(2 * np.pi * 5.0 * t125))
        assert out.shape == (3000,)
        expect = np.sin(2 * np.pi * 5.0 * np.arange(3000) / 100.0)
        interior = slice(200, 2800)
        assert np.abs(out[interior] - expect[interior]).max() < 5e-3
