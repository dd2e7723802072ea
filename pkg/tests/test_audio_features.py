import math
import unittest

import numpy as np
import numpy.testing as npt

from exceptions import ConfigError, DataFormatError, InvalidArgumentError
from logic.audio_features import (AudioClip, FeatureConfig, FeatureMatrix, FeatureNormalizer,
                                  extract_many, extract_mbe, frame_signal, hamming_window,
                                  hz_to_mel, mel_band_edges, mel_filterbank, mel_to_hz,
                                  power_spectrum)


def _noise_clip(num_samples: int, seed: int = 0, sample_rate: int = 44100) -> AudioClip:
    rng = np.random.default_rng(seed)
    return AudioClip(rng.uniform(-0.5, 0.5, num_samples), sample_rate)


class TestAudioClip(unittest.TestCase):

    def test_rejects_multichannel(self):
        with self.assertRaises(DataFormatError) as ctx:
            AudioClip(np.zeros((100, 2)), 44100)
        self.assertEqual(ctx.exception.code, 'NOT_MONO')

    def test_rejects_non_finite_samples(self):
        with self.assertRaises(DataFormatError):
            AudioClip(np.array([0.0, np.nan, 0.1]), 44100)

    def test_rejects_bad_sample_rate(self):
        with self.assertRaises(InvalidArgumentError):
            AudioClip(np.zeros(10), 0)

    def test_duration(self):
        self.assertAlmostEqual(AudioClip(np.zeros(22050), 44100).duration_s, 0.5)


class TestFeatureConfig(unittest.TestCase):

    def test_default_window_and_hop_at_44k(self):
        cfg = FeatureConfig()
        self.assertEqual(cfg.window_length(44100), 1764)
        self.assertEqual(cfg.hop_length(44100), 882)
        self.assertEqual(cfg.resolved_fft_size(44100), 2048)

    def test_invalid_values(self):
        for kwargs in ({'overlap_fraction': 1.0}, {'window_ms': 0}, {'num_mel_bands': 0},
                       {'fmin': 5000.0, 'fmax': 4000.0}, {'log_floor': 0.0}):
            with self.subTest(kwargs=kwargs), self.assertRaises(ConfigError):
                FeatureConfig(**kwargs).validate()

    def test_fft_size_shorter_than_window(self):
        with self.assertRaises(ConfigError):
            FeatureConfig(fft_size=512).resolved_fft_size(44100)


class TestFraming(unittest.TestCase):

    def test_hamming_window(self):
        window = hamming_window(5)
        npt.assert_allclose(window, [0.08, 0.54, 1.0, 0.54, 0.08])
        npt.assert_array_equal(hamming_window(1), [1.0])
        with self.assertRaises(InvalidArgumentError):
            hamming_window(0)

    def test_frame_count_is_ceiling_of_length_over_hop(self):
        cfg = FeatureConfig()
        rng = np.random.default_rng(3)
        for length in rng.integers(1, 60000, size=50):
            with self.subTest(length=int(length)):
                frames = frame_signal(AudioClip(np.ones(int(length)), 44100), cfg)
                self.assertEqual(frames.shape, (math.ceil(length / 882), 1764))

    def test_empty_clip_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            frame_signal(AudioClip(np.zeros(0), 44100), FeatureConfig())

    def test_power_spectrum_of_dc(self):
        spectrum = power_spectrum(np.ones(4), 8)
        self.assertEqual(spectrum.shape, (5,))
        self.assertAlmostEqual(spectrum[0], 16.0)

    def test_power_spectrum_rejects_long_frame(self):
        with self.assertRaises(InvalidArgumentError):
            power_spectrum(np.ones(16), 8)


class TestMelScale(unittest.TestCase):

    def test_reference_point(self):
        self.assertAlmostEqual(float(hz_to_mel(700.0)), 2595.0 * math.log10(2.0))

    def test_inverse(self):
        freqs = np.array([0.0, 100.0, 1000.0, 8000.0, 22050.0])
        npt.assert_allclose(mel_to_hz(hz_to_mel(freqs)), freqs, atol=1e-8)

    def test_band_edges_span_range(self):
        edges = mel_band_edges(FeatureConfig())
        self.assertEqual(len(edges), 42)
        self.assertEqual(edges[0], 0.0)
        self.assertEqual(edges[-1], 22050.0)
        self.assertTrue(np.all(np.diff(edges) > 0))

    def test_filterbank_rows_peak_at_one(self):
        bank = mel_filterbank(FeatureConfig(), 44100)
        self.assertEqual(bank.shape, (40, 1025))
        peaks = bank.max(axis=1)
        npt.assert_allclose(peaks[peaks > 0], 1.0)
        self.assertGreaterEqual(bank.min(), 0.0)

    def test_fmax_above_nyquist(self):
        with self.assertRaises(InvalidArgumentError):
            mel_filterbank(FeatureConfig(), 16000)


class TestExtractMbe(unittest.TestCase):

    def test_ten_second_clip_gives_500_by_40(self):
        features = extract_mbe(_noise_clip(441000))
        self.assertEqual(features.values.shape, (500, 40))
        self.assertAlmostEqual(features.frame_hop_s, 0.02)
        self.assertTrue(np.all(np.isfinite(features.values)))

    def test_deterministic(self):
        first = extract_mbe(_noise_clip(20000, seed=5))
        second = extract_mbe(_noise_clip(20000, seed=5))
        npt.assert_array_equal(first.values, second.values)

    def test_silence_sits_at_log_floor(self):
        features = extract_mbe(AudioClip(np.zeros(8820), 44100))
        npt.assert_allclose(features.values, math.log(1e-10))

    def test_tone_energy_lands_near_its_band(self):
        t = np.arange(44100) / 44100
        features = extract_mbe(AudioClip(0.5 * np.sin(2 * np.pi * 1000.0 * t), 44100))
        centers = mel_band_edges(FeatureConfig())[1:-1]
        loudest = int(np.argmax(features.values.mean(axis=0)))
        self.assertLess(abs(centers[loudest] - 1000.0), 200.0)

    def test_extract_many_matches_sequential(self):
        clips = [_noise_clip(5000 + 1000 * i, seed=i) for i in range(4)]
        sequential = extract_many(clips, threads=1)
        threaded = extract_many(clips, threads=3)
        for a, b in zip(sequential, threaded):
            npt.assert_array_equal(a.values, b.values)


class TestFeatureNormalizer(unittest.TestCase):

    def _matrix(self, values):
        return FeatureMatrix(values=np.asarray(values, dtype=np.float64), frame_hop_s=0.02)

    def test_unfitted_is_identity(self):
        matrix = self._matrix([[1.0, 2.0]])
        self.assertFalse(FeatureNormalizer().is_fitted)
        self.assertIs(FeatureNormalizer().apply(matrix), matrix)

    def test_standardises_each_band(self):
        rng = np.random.default_rng(0)
        train = [self._matrix(rng.normal(3.0, 2.0, size=(50, 4))) for _ in range(3)]
        normalizer = FeatureNormalizer().fit(train)
        stacked = np.concatenate([normalizer.apply(m).values for m in train])
        npt.assert_allclose(stacked.mean(axis=0), 0.0, atol=1e-12)
        npt.assert_allclose(stacked.std(axis=0), 1.0)

    def test_constant_band_keeps_unit_scale(self):
        normalizer = FeatureNormalizer().fit([self._matrix([[5.0, 1.0], [5.0, 3.0]])])
        self.assertEqual(normalizer.std[0], 1.0)
        npt.assert_allclose(normalizer.apply(self._matrix([[5.0, 2.0]])).values, [[0.0, 0.0]])

    def test_band_mismatch(self):
        normalizer = FeatureNormalizer().fit([self._matrix([[1.0, 2.0], [2.0, 3.0]])])
        with self.assertRaises(InvalidArgumentError):
            normalizer.apply(self._matrix([[1.0, 2.0, 3.0]]))

    def test_fit_requires_data(self):
        with self.assertRaises(InvalidArgumentError):
            FeatureNormalizer().fit([])


if __name__ == '__main__':
    unittest.main()
