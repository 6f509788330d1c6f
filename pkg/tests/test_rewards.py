"""Reward-path tests: closed-form reward values, spectrum vs a naive DFT
oracle, Parseval's identity, and synthetic-tone recovery."""

import math

import numpy as np
import pytest

from tethertrain.errors import ConfigurationError
from tethertrain.rewards import (
    GRAVITY,
    SpectrumResult,
    SwingRewardConfig,
    WalkRewardConfig,
    fft_radix2,
    force_spectrum,
    swing_reward,
    walk_reward,
)


def naive_dft(x):
    """O(n^2) discrete Fourier transform, the independent oracle."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * k * m / n)) for m in range(n)])


class TestWalkReward:
    def test_on_target_is_one(self):
        cfg = WalkRewardConfig(v_target=0.15)
        assert walk_reward(0.15, cfg) == pytest.approx(1.0, abs=0)

    def test_tenth_off_target(self):
        cfg = WalkRewardConfig(sigma=100.0, v_target=0.15)
        assert walk_reward(0.25, cfg) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_three_tenths_off_target(self):
        cfg = WalkRewardConfig(sigma=100.0, v_target=0.1)
        assert walk_reward(0.4, cfg) == pytest.approx(math.exp(-9.0), rel=1e-12)

    def test_matches_formula_on_random_inputs(self):
        rng = np.random.default_rng(0)
        cfg = WalkRewardConfig(sigma=100.0, v_target=0.15)
        for v in rng.uniform(-1, 1, size=1000):
            want = math.exp(-100.0 * (v - 0.15) ** 2)
            assert abs(walk_reward(v, cfg) - want) < 1e-12

    def test_strictly_decreasing_in_error(self):
        cfg = WalkRewardConfig(v_target=0.15)
        errs = np.linspace(0, 0.5, 40)
        vals = [walk_reward(0.15 + e, cfg) for e in errs]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        # symmetric side
        vals_lo = [walk_reward(0.15 - e, cfg) for e in errs]
        np.testing.assert_allclose(vals, vals_lo, rtol=1e-12)

    def test_bad_sigma_rejected(self):
        with pytest.raises(ConfigurationError):
            WalkRewardConfig(sigma=0.0)


class TestSwingReward:
    def test_target_amplitude_constant(self):
        cfg = SwingRewardConfig()
        assert cfg.amp_target == pytest.approx(3.5 * 9.81 * math.pi / 6.0, abs=1e-9)
        assert GRAVITY == 9.81

    def test_on_target_is_one(self):
        cfg = SwingRewardConfig()
        spec = SpectrumResult(np.zeros(1), np.zeros(1), 1.0, cfg.amp_target)
        assert swing_reward(spec, cfg) == pytest.approx(1.0, abs=0)

    def test_zero_amplitude(self):
        cfg = SwingRewardConfig()
        spec = SpectrumResult(np.zeros(1), np.zeros(1), 1.0, 0.0)
        want = math.exp(-0.005 * cfg.amp_target**2)
        assert swing_reward(spec, cfg) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(0.1986, abs=2e-3)

    def test_ten_newtons_over(self):
        cfg = SwingRewardConfig()
        spec = SpectrumResult(np.zeros(1), np.zeros(1), 1.0, cfg.amp_target + 10.0)
        assert swing_reward(spec, cfg) == pytest.approx(math.exp(-0.5), rel=1e-12)

    def test_degenerate_spectrum_scores_as_zero_amplitude(self):
        cfg = SwingRewardConfig()
        spec = SpectrumResult(np.zeros(1), np.zeros(1), 0.0, 5.0, degenerate=True)
        assert swing_reward(spec, cfg) == pytest.approx(math.exp(-0.005 * cfg.amp_target**2))

    def test_matches_formula_on_random_inputs(self):
        rng = np.random.default_rng(1)
        cfg = SwingRewardConfig()
        for amp in rng.uniform(0, 40, size=1000):
            spec = SpectrumResult(np.zeros(1), np.zeros(1), 1.0, amp)
            want = math.exp(-0.005 * (amp - cfg.amp_target) ** 2)
            assert abs(swing_reward(spec, cfg) - want) < 1e-12

    def test_unique_maximum_at_target(self):
        cfg = SwingRewardConfig()
        amps = np.linspace(0, 2 * cfg.amp_target, 101)
        vals = [
            swing_reward(SpectrumResult(np.zeros(1), np.zeros(1), 1.0, a), cfg) for a in amps
        ]
        assert np.argmax(vals) == 50  # target sits exactly mid-grid


class TestFft:
    @pytest.mark.parametrize("n", [2, 8, 64, 256, 1024])
    def test_matches_naive_dft(self, n):
        rng = np.random.default_rng(n)
        x = rng.normal(size=n)
        got = fft_radix2(x)
        want = naive_dft(x)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ConfigurationError):
            fft_radix2(np.zeros(1000))

    def test_parseval(self):
        rng = np.random.default_rng(77)
        x = rng.normal(size=512)
        spec = fft_radix2(x)
        t_energy = np.sum(x * x)
        f_energy = np.sum(np.abs(spec) ** 2) / 512
        assert abs(t_energy - f_energy) / t_energy < 1e-6


class TestForceSpectrum:
    FS = 50.0

    def _sine(self, amp, freq, n=1000, phase=0.0):
        t = np.arange(n) / self.FS
        return amp * np.sin(2 * np.pi * freq * t + phase)

    def test_pure_tone_amplitude_and_frequency(self):
        spec = force_spectrum(self._sine(2.0, 1.0), self.FS)
        assert not spec.degenerate
        bin_width = self.FS / 1024
        assert abs(spec.dominant_frequency - 1.0) <= bin_width
        assert abs(spec.dominant_amplitude - 2.0) / 2.0 < 0.05

    def test_dc_only_is_degenerate_dominance(self):
        spec = force_spectrum(np.full(1000, 5.0), self.FS)
        # constant force: no periodic component may win
        assert spec.dominant_amplitude < 0.05 * 5.0

    def test_all_zero_history_flags_degenerate(self):
        spec = force_spectrum(np.zeros(1000), self.FS)
        assert spec.degenerate
        assert spec.dominant_frequency == 0.0
        assert spec.dominant_amplitude == 0.0

    def test_two_tone_picks_the_larger(self):
        x = self._sine(1.0, 0.8) + self._sine(3.0, 1.5)
        spec = force_spectrum(x, self.FS)
        bin_width = self.FS / 1024
        assert abs(spec.dominant_frequency - 1.5) <= bin_width
        assert abs(spec.dominant_amplitude - 3.0) / 3.0 < 0.05

    def test_short_history_zero_pads(self):
        spec = force_spectrum(self._sine(2.0, 1.0, n=700), self.FS, window=1000)
        assert not spec.degenerate
        assert abs(spec.dominant_frequency - 1.0) < 0.15

    def test_dc_bias_does_not_mask_tone(self):
        x = 8.0 + self._sine(1.5, 1.2)
        spec = force_spectrum(x, self.FS)
        assert abs(spec.dominant_frequency - 1.2) < 0.1
        assert abs(spec.dominant_amplitude - 1.5) / 1.5 < 0.08

    def test_amplitudes_are_nonnegative(self):
        rng = np.random.default_rng(3)
        spec = force_spectrum(rng.normal(size=1000), self.FS)
        assert np.all(spec.amplitudes >= 0)
