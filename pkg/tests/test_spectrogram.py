"""Ramp segmentation, FFT modulus, tensor construction and PGM export."""

import numpy as np
import pytest

from radarnet import fourier
from radarnet.radar import BeatSignal, PointTarget, RadarParams, RampPolarity, synthesize_point_targets
from radarnet.spectrogram import (
    PadOverflowError,
    RdTensor,
    Spectrogram,
    build_spectrograms,
    build_tensor,
    compute_mean_tensor,
    export_pgm,
    fft_modulus,
    mean_normalize,
    segment_ramps,
    signal_to_tensor,
)

from _oracles import naive_dft, naive_dft_modulus_onesided

P = RadarParams()


def _signal(n_samples, first=RampPolarity.UP, fill=None):
    rng = np.random.default_rng(9)
    samples = rng.normal(size=n_samples) if fill is None else np.full(n_samples, fill, float)
    return BeatSignal(samples=samples, sample_rate=P.sample_rate, first_ramp=first, samples_per_ramp=512)


class TestSegmentRamps:
    def test_even_split(self):
        up, down = segment_ramps(_signal(5120))
        assert up.shape == (5, 512)
        assert down.shape == (5, 512)

    def test_trailing_partial_discarded(self):
        sig = _signal(5220)
        up, down = segment_ramps(sig)
        assert up.shape == (5, 512)
        assert down.shape == (5, 512)
        ref_up, _ = segment_ramps(_signal(5120))
        # identical rng means the first 5120 samples agree
        np.testing.assert_array_equal(up, sig.samples[:5120].reshape(10, 512)[0::2])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            segment_ramps(_signal(600))

    def test_first_ramp_down_swaps_assignment(self):
        sig_up = _signal(2048, RampPolarity.UP)
        sig_down = _signal(2048, RampPolarity.DOWN)
        u1, d1 = segment_ramps(sig_up)
        u2, d2 = segment_ramps(sig_down)
        np.testing.assert_array_equal(u1, d2)
        np.testing.assert_array_equal(d1, u2)

    def test_windows_cover_signal_in_order(self):
        sig = _signal(2048)
        up, down = segment_ramps(sig)
        np.testing.assert_array_equal(up[0], sig.samples[:512])
        np.testing.assert_array_equal(down[0], sig.samples[512:1024])
        np.testing.assert_array_equal(up[1], sig.samples[1024:1536])


class TestFftModulus:
    def test_cosine_peak_at_bin_100(self):
        n = np.arange(512)
        x = np.cos(2 * np.pi * 100 * n / 512)
        mod = fft_modulus(x, 512)
        assert mod.shape == (257,)
        assert int(np.argmax(mod)) == 100
        assert mod[100] == pytest.approx(256.0, rel=1e-9)
        oracle = naive_dft_modulus_onesided(x, 512)
        assert np.max(np.abs(mod - oracle)) / np.max(oracle) < 1e-6

    def test_zero_window(self):
        assert np.all(fft_modulus(np.zeros(512), 512) == 0.0)

    def test_dc_window(self):
        mod = fft_modulus(np.ones(512), 512)
        assert mod[0] == pytest.approx(512.0)
        assert np.max(mod[1:]) < 1e-9

    def test_zero_padding_short_window(self):
        x = np.ones(100)
        mod = fft_modulus(x, 512)
        oracle = naive_dft_modulus_onesided(x, 512)
        np.testing.assert_allclose(mod, oracle, atol=1e-9)

    def test_overlong_window_rejected(self):
        with pytest.raises(ValueError):
            fft_modulus(np.zeros(513), 512)

    def test_matches_naive_dft_on_random_windows(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            x = rng.normal(size=512)
            mod = fft_modulus(x, 512)
            oracle = naive_dft_modulus_onesided(x, 512)
            assert np.max(np.abs(mod - oracle)) / np.max(np.abs(oracle)) < 1e-6

    def test_parseval_on_two_sided_transform(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            x = rng.normal(size=512)
            spectrum = fourier.fft(x)
            lhs = np.sum(np.abs(spectrum) ** 2)
            rhs = 512 * np.sum(x * x)
            assert abs(lhs - rhs) / rhs < 1e-6

    def test_fft_requires_power_of_two(self):
        with pytest.raises(ValueError):
            fourier.fft(np.zeros(500))

    def test_fft_matches_naive_on_other_sizes(self):
        rng = np.random.default_rng(33)
        for n in (1, 2, 8, 64, 256, 1024):
            x = rng.normal(size=n) + 1j * rng.normal(size=n)
            np.testing.assert_allclose(fourier.fft(x), naive_dft(x), atol=1e-8 * max(n, 1))


class TestBuildSpectrograms:
    def test_shapes_and_column_definition(self):
        sig = _signal(5120)
        up, down = build_spectrograms(sig, P)
        assert up.values.shape == (257, 5)
        assert down.values.shape == (257, 5)
        assert up.bin_hz == pytest.approx(25.0)
        up_w, down_w = segment_ramps(sig)
        for j in range(5):
            np.testing.assert_array_equal(up.values[:, j], fft_modulus(up_w[j], 512))
            np.testing.assert_array_equal(down.values[:, j], fft_modulus(down_w[j], 512))

    def test_zero_signal(self):
        up, down = build_spectrograms(_signal(2048, fill=0.0), P)
        assert np.all(up.values == 0.0)
        assert np.all(down.values == 0.0)

    def test_nonnegative(self):
        up, down = build_spectrograms(_signal(4096), P)
        assert np.all(up.values >= 0.0)
        assert np.all(down.values >= 0.0)


def _spect(width, height=257, fill=1.0, polarity=RampPolarity.UP):
    return Spectrogram(values=np.full((height, width), fill), bin_hz=25.0, ramp_polarity=polarity)


class TestBuildTensor:
    def test_padding_layout(self):
        rng = np.random.default_rng(40)
        up = Spectrogram(rng.random((257, 12)), 25.0, RampPolarity.UP)
        down = Spectrogram(rng.random((257, 12)), 25.0, RampPolarity.DOWN)
        t = build_tensor(up, down, 32)
        assert t.values.shape == (3, 257, 32)
        np.testing.assert_allclose(t.values[0, :, :12], up.values, rtol=1e-6)
        np.testing.assert_allclose(t.values[1, :, :12], down.values, rtol=1e-6)
        assert np.all(t.values[:, :, 12:] == 0.0)

    def test_average_channel(self):
        rng = np.random.default_rng(41)
        up = Spectrogram(rng.random((257, 8)), 25.0, RampPolarity.UP)
        down = Spectrogram(rng.random((257, 8)), 25.0, RampPolarity.DOWN)
        t = build_tensor(up, down, 16)
        np.testing.assert_array_equal(t.values[2], (t.values[0] + t.values[1]) / 2)

    def test_overflow_without_crop(self):
        with pytest.raises(PadOverflowError):
            build_tensor(_spect(40), _spect(40), 32)

    def test_explicit_crop(self):
        t = build_tensor(_spect(40), _spect(40), 32, allow_crop=True)
        assert t.values.shape == (3, 257, 32)

    def test_width_mismatch_by_one_padded(self):
        t = build_tensor(_spect(5), _spect(4), 8)
        assert np.all(t.values[1, :, 4] == 0.0)
        assert np.all(t.values[0, :, 4] == 1.0)

    def test_width_mismatch_beyond_one_rejected(self):
        with pytest.raises(ValueError):
            build_tensor(_spect(6), _spect(4), 8)

    def test_roundtrip_of_unpadded_region(self):
        sig = synthesize_point_targets([PointTarget(30.0, 20.0)], 10, P)
        up, down = build_spectrograms(sig, P)
        t = build_tensor(up, down, 8)
        np.testing.assert_array_equal(t.values[0, :, :5], up.values.astype(np.float32))
        np.testing.assert_array_equal(t.values[1, :, :5], down.values.astype(np.float32))

    def test_pipeline_determinism(self):
        sig = synthesize_point_targets([PointTarget(30.0, 20.0)], 10, P, noise_sigma=0.1, seed=4)
        a = signal_to_tensor(sig, P, 8)
        b = signal_to_tensor(sig, P, 8)
        np.testing.assert_array_equal(a.values, b.values)

    def test_frequency_window_yields_square_input(self):
        # the full-preset shape: crop to 227 bins, pad time to 227 columns
        sig = synthesize_point_targets([PointTarget(30.0, 20.0)], 10, P)
        t = signal_to_tensor(sig, P, 227, freq_range=(0, 227))
        assert t.values.shape == (3, 227, 227)
        up, down = build_spectrograms(sig, P)
        np.testing.assert_array_equal(t.values[0, :, :5], up.values[:227].astype(np.float32))

    def test_frequency_window_validated(self):
        with pytest.raises(ValueError):
            build_tensor(_spect(4), _spect(4), 8, freq_range=(0, 300))
        with pytest.raises(ValueError):
            build_tensor(_spect(4), _spect(4), 8, freq_range=(10, 10))


class TestMeanNormalization:
    def _tensor(self, fill):
        return RdTensor(values=np.full((3, 4, 5), fill, dtype=np.float32))

    def test_single_element_mean(self):
        t = self._tensor(3.5)
        np.testing.assert_array_equal(compute_mean_tensor([t]).values, t.values)

    def test_symmetric_pair_cancels(self):
        rng = np.random.default_rng(43)
        x = RdTensor(rng.normal(size=(3, 4, 5)).astype(np.float32))
        neg = RdTensor(-x.values)
        assert np.all(np.abs(compute_mean_tensor([x, neg]).values) < 1e-7)

    def test_constant_mean(self):
        mean = compute_mean_tensor([self._tensor(2.0), self._tensor(2.0)])
        np.testing.assert_array_equal(mean.values, self._tensor(2.0).values)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_mean_tensor([])

    def test_shape_mismatch_rejected(self):
        a = self._tensor(1.0)
        b = RdTensor(np.zeros((3, 4, 6), dtype=np.float32))
        with pytest.raises(ValueError):
            compute_mean_tensor([a, b])
        with pytest.raises(ValueError):
            mean_normalize(a, b)

    def test_normalize_by_own_mean_is_zero(self):
        t = self._tensor(4.25)
        assert np.all(mean_normalize(t, t).values == 0.0)

    def test_zero_mean_is_identity(self):
        rng = np.random.default_rng(44)
        t = RdTensor(rng.normal(size=(3, 4, 5)).astype(np.float32))
        zero = RdTensor(np.zeros((3, 4, 5), dtype=np.float32))
        np.testing.assert_array_equal(mean_normalize(t, zero).values, t.values)

    def test_train_set_zero_mean_after_normalization(self):
        rng = np.random.default_rng(45)
        tensors = [RdTensor((rng.random((3, 8, 6)) * 200).astype(np.float32)) for _ in range(40)]
        mean = compute_mean_tensor(tensors)
        normalized = [mean_normalize(t, mean) for t in tensors]
        residual = np.mean([t.values.astype(np.float64) for t in normalized], axis=0)
        assert np.max(np.abs(residual)) < 1e-5

    def test_label_preserved(self):
        from radarnet.radar import VehicleClass

        t = RdTensor(np.zeros((3, 4, 5), dtype=np.float32), label=VehicleClass.BUS)
        out = mean_normalize(t, self._tensor(0.0))
        assert out.label is VehicleClass.BUS


class TestExportPgm:
    def test_linear_scaling_pixels(self):
        data = export_pgm(np.array([[0.0, 1.0], [2.0, 3.0]]))
        header = b"P5\n2 2\n255\n"
        assert data.startswith(header)
        pixels = data[len(header):]
        # bin 0 row renders at the bottom: top row is [2,3]
        assert list(pixels) == [170, 255, 0, 85]

    def test_constant_matrix_black(self):
        data = export_pgm(np.full((3, 4), 7.0))
        assert set(data[len(b"P5\n4 3\n255\n"):]) == {0}

    def test_header_exact(self):
        data = export_pgm(np.zeros((5, 7)))
        assert data[:13] == b"P5\n7 5\n255\n\x00\x00"
        assert len(data) == len(b"P5\n7 5\n255\n") + 35

    def test_log_mode_changes_pixels_not_shape(self):
        rng = np.random.default_rng(50)
        m = rng.random((6, 9)) * 100
        lin = export_pgm(m, log_scale=False)
        log = export_pgm(m, log_scale=True)
        header = b"P5\n9 6\n255\n"
        assert lin[: len(header)] == header
        assert log[: len(header)] == header
        assert len(lin) == len(log)
        assert lin != log

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            export_pgm(np.array([[1.0, np.nan]]))

    def test_spectrogram_accepted(self):
        data = export_pgm(_spect(4, height=8))
        assert data.startswith(b"P5\n4 8\n255\n")
