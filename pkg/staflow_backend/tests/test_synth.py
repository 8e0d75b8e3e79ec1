import unittest

import numpy as np
from scipy import stats

from staflow_backend.errors import ConfigError
from staflow_backend.preprocessing import band_power
from staflow_backend.synth import ClassPattern, SynthSpec, synth_generate


class SynthSpecTests(unittest.TestCase):
    def test_default_patterns_are_disjoint_blocks(self):
        spec = SynthSpec(n_classes=2, n_channels=8)
        self.assertEqual([p.channels for p in spec.patterns()], [(0, 1), (2, 3)])

    def test_problems_collected(self):
        spec = SynthSpec(n_classes=1, trials_per_class=0, erd_depth=1.5, rhythm_hz=200.0)
        self.assertGreaterEqual(len(spec.problems()), 4)
        with self.assertRaises(ConfigError):
            spec.validate()

    def test_class_map_channels_checked(self):
        spec = SynthSpec(n_channels=4, class_map=[{"channels": [0], "depth": 0.5}, {"channels": [9], "depth": 0.5}])
        self.assertTrue(any("class 1" in p for p in spec.problems()))

    def test_dict_round_trip(self):
        spec = SynthSpec(seed=5, class_map=[ClassPattern((0,), 0.7), ClassPattern((3,), 0.9)])
        again = SynthSpec.from_dict(spec.to_dict())
        self.assertEqual(again.patterns(), spec.patterns())
        self.assertEqual(again.seed, 5)

    def test_unknown_field_rejected(self):
        with self.assertRaises(ConfigError):
            SynthSpec.from_dict({"n_classes": 2, "snr": 3})


class SynthGenerateTests(unittest.TestCase):
    def test_same_seed_is_bitwise_identical(self):
        spec = SynthSpec(trials_per_class=5, duration_s=1.0, seed=42)
        self.assertTrue(synth_generate(spec).same_as(synth_generate(spec)))

    def test_different_seed_differs(self):
        a = synth_generate(SynthSpec(trials_per_class=5, duration_s=1.0, seed=1))
        b = synth_generate(SynthSpec(trials_per_class=5, duration_s=1.0, seed=2))
        self.assertFalse(a.same_as(b))

    def test_balanced_shapes(self):
        trials = synth_generate(SynthSpec(n_classes=3, trials_per_class=7, n_channels=6, duration_s=2.0))
        self.assertEqual(trials.data.shape, (21, 6, 500))
        np.testing.assert_array_equal(trials.class_counts(), [7, 7, 7])

    def test_erd_lowers_mu_power_in_second_half(self):
        spec = SynthSpec(trials_per_class=50)
        trials = synth_generate(spec)
        half = spec.n_samples // 2
        channel = spec.patterns()[0].channels[0]
        own = trials.data[trials.labels == 0, channel]
        first = band_power(own[:, :half], spec.sample_rate_hz, (8, 12)).mean()
        second = band_power(own[:, half:], spec.sample_rate_hz, (8, 12)).mean()
        self.assertLess(second / first, 1.0)

    def test_class_is_detectable_on_its_channels(self):
        spec = SynthSpec(trials_per_class=50)
        trials = synth_generate(spec)
        half = spec.n_samples // 2
        channel = spec.patterns()[0].channels[0]
        power = band_power(trials.data[:, channel, half:], spec.sample_rate_hz, (8, 12))
        result = stats.ttest_ind(power[trials.labels == 1], power[trials.labels == 0])
        self.assertLess(result.pvalue, 0.01)

    def test_zero_depth_leaves_rhythm_untouched(self):
        spec = SynthSpec(trials_per_class=3, duration_s=1.0, noise_std=0.0, erd_depth=0.0)
        trials = synth_generate(spec)
        peak = np.abs(trials.data).max(axis=2)
        np.testing.assert_allclose(peak, spec.rhythm_amplitude, rtol=0.01)


if __name__ == "__main__":
    unittest.main()
