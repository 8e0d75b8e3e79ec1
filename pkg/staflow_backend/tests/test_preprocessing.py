import unittest

import numpy as np

from staflow_backend.errors import ConfigError, DataError
from staflow_backend.preprocessing import (
    FilterSpec,
    analytic_magnitude,
    band_power,
    bandpass_filter,
    decimate,
    design_sos,
    epoch_extract,
    filter_array,
    frequency_response,
)
from staflow_backend.trials import TrialSet

FS = 250.0
SPEC = FilterSpec(order=5, low_hz=4.0, high_hz=40.0)


def _sine(freq, seconds=10.0, fs=FS):
    t = np.arange(int(seconds * fs)) / fs
    return np.sin(2 * np.pi * freq * t)


def _steady_gain(freq, zero_phase=False):
    """Amplitude ratio over the last 4 s, measured at the input frequency by FFT."""
    x = _sine(freq)
    y = filter_array(x, SPEC, FS, zero_phase=zero_phase)
    tail = slice(len(x) - int(4 * FS), len(x))
    spectrum_in = np.abs(np.fft.rfft(x[tail]))
    spectrum_out = np.abs(np.fft.rfft(y[tail]))
    k = int(round(freq * 4.0))
    return spectrum_out[k] / spectrum_in[k]


def _db(gain):
    return -20.0 * np.log10(gain)


class FilterDesignTests(unittest.TestCase):
    def test_design_is_tenth_order_cascade(self):
        sos = design_sos(SPEC, FS)
        self.assertEqual(sos.shape, (5, 6))

    def test_passband_gain(self):
        self.assertTrue(0.95 <= _steady_gain(20.0) <= 1.05)

    def test_low_stopband_attenuation(self):
        self.assertGreaterEqual(_db(_steady_gain(1.0)), 40.0)

    def test_high_stopband_attenuation(self):
        self.assertGreaterEqual(_db(_steady_gain(60.0)), 10.0)

    def test_dc_rejected_after_transient(self):
        y = filter_array(np.ones(int(6 * FS)), SPEC, FS, zero_phase=False)
        self.assertLess(np.max(np.abs(y[int(2 * FS) :])), 1e-3)

    def test_designed_response_matches_analytic_magnitude(self):
        freqs = np.linspace(1.0, 100.0, 200)
        designed = frequency_response(SPEC, FS, freqs)
        analytic = analytic_magnitude(SPEC, FS, freqs)
        passband = analytic > 0.1
        np.testing.assert_allclose(designed[passband], analytic[passband], rtol=0.01)
        np.testing.assert_allclose(designed, analytic, atol=1e-3)

    def test_analytic_magnitude_is_zero_at_dc(self):
        self.assertEqual(analytic_magnitude(SPEC, FS, [0.0])[0], 0.0)

    def test_band_edges_at_half_power(self):
        edges = frequency_response(SPEC, FS, [4.0, 40.0])
        np.testing.assert_allclose(edges, 1 / np.sqrt(2), rtol=1e-6)

    def test_invalid_bands(self):
        for spec in (FilterSpec(low_hz=40, high_hz=4), FilterSpec(high_hz=125), FilterSpec(order=0)):
            with self.subTest(spec=spec):
                with self.assertRaises(ConfigError):
                    design_sos(spec, FS)


class FilteringTests(unittest.TestCase):
    def test_linearity(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=1000), rng.normal(size=1000)
        for zero_phase in (True, False):
            with self.subTest(zero_phase=zero_phase):
                lhs = filter_array(2.0 * x + 3.0 * y, SPEC, FS, zero_phase)
                rhs = 2.0 * filter_array(x, SPEC, FS, zero_phase) + 3.0 * filter_array(y, SPEC, FS, zero_phase)
                np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_zero_phase_has_no_lag(self):
        x = _sine(12.0)
        y = filter_array(x, SPEC, FS, zero_phase=True)
        mid = slice(int(3 * FS), int(7 * FS))
        lags = np.arange(-10, 11)
        corr = [np.dot(x[mid], np.roll(y, -lag)[mid]) for lag in lags]
        self.assertEqual(int(lags[int(np.argmax(corr))]), 0)

    def test_causal_filter_is_causal(self):
        x = np.zeros(500)
        x[300] = 1.0
        y = filter_array(x, SPEC, FS, zero_phase=False)
        self.assertTrue(np.all(y[:300] == 0.0))

    def test_bandpass_keeps_trial_metadata(self):
        trials = TrialSet(np.random.default_rng(1).normal(size=(3, 2, 500)), [0, 1, 0], FS, channel_names=["C3", "C4"])
        out = bandpass_filter(trials, SPEC)
        self.assertEqual(out.data.shape, trials.data.shape)
        self.assertEqual(out.data.dtype, np.float32)
        self.assertEqual(out.channel_names, ["C3", "C4"])
        np.testing.assert_array_equal(out.labels, trials.labels)

    def test_filtering_short_trials(self):
        trials = TrialSet(np.ones((1, 1, 10)), [0], FS, n_classes=2)
        self.assertEqual(bandpass_filter(trials, SPEC).n_samples, 10)


class EpochTests(unittest.TestCase):
    def test_four_second_window(self):
        continuous = np.tile(np.arange(5000, dtype=np.float64), (3, 1))
        trials = epoch_extract(continuous, [100, 2000], FS, (0.0, 4.0), labels=[1, 0])
        self.assertEqual(trials.data.shape, (2, 3, 1000))
        self.assertEqual(trials.data[1, 0, 0], 2000.0)
        self.assertEqual(trials.data[1, 0, -1], 2999.0)

    def test_window_past_end_names_cue(self):
        continuous = np.zeros((2, 1500))
        with self.assertRaisesRegex(DataError, "cue 1"):
            epoch_extract(continuous, [0, 1000], FS, labels=[0, 1])

    def test_window_before_start(self):
        with self.assertRaisesRegex(DataError, "cue 0"):
            epoch_extract(np.zeros((1, 3000)), [100], FS, (-1.0, 2.0), labels=[0])


class ResampleTests(unittest.TestCase):
    def test_decimate_halves_rate_and_keeps_slow_rhythm(self):
        x = _sine(10.0, seconds=4.0)[None, None, :]
        trials = TrialSet(x, [0], FS, n_classes=2)
        out = decimate(trials, 2)
        self.assertEqual(out.sample_rate_hz, 125.0)
        self.assertEqual(out.n_samples, 500)
        expected = _sine(10.0, seconds=4.0, fs=125.0)
        np.testing.assert_allclose(out.data[0, 0, 50:-50], expected[50:-50], atol=0.05)

    def test_decimate_rejects_bad_factor(self):
        trials = TrialSet(np.zeros((1, 1, 100)), [0], FS, n_classes=2)
        for factor in (0, 1.5, True):
            with self.subTest(factor=factor):
                with self.assertRaises(ConfigError):
                    decimate(trials, factor)

    def test_band_power_peaks_at_rhythm(self):
        x = _sine(10.0, seconds=4.0)
        self.assertGreater(band_power(x, FS, (8, 12)), 100 * band_power(x, FS, (20, 30)))


if __name__ == "__main__":
    unittest.main()
