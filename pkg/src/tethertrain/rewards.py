"""Reward signals for the two tasks.

Walking: a squared-exponential of the velocity tracking error.  Swing-up:
the same shape applied to the amplitude of the dominant periodic
component of the horizontal tether force, estimated from a sliding
window of force readings.

The spectral path works on a fixed window of ``window`` samples (1000 by
default, taken at the 50 Hz control rate).  Windows are Hann-weighted,
zero-padded to the next power of two for a radix-2 transform, and the
single-sided amplitude spectrum is normalized by the window's coherent
gain so a pure sinusoid of amplitude A reports approximately A at its
bin.  The DC bin never wins the dominance search: the tether carries a
constant gravity bias that would otherwise always dominate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

GRAVITY = 9.81

__all__ = [
    "GRAVITY",
    "WalkRewardConfig",
    "SwingRewardConfig",
    "SpectrumResult",
    "walk_reward",
    "swing_reward",
    "force_spectrum",
    "fft_radix2",
]


@dataclass
class WalkRewardConfig:
    sigma: float = 100.0
    v_target: float = 0.15  # m/s

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")


def default_swing_target() -> float:
    # peak horizontal force of a small-angle swing: mass * g * max angle
    return 3.5 * GRAVITY * (math.pi / 6.0)


@dataclass
class SwingRewardConfig:
    alpha: float = 0.005
    window: int = 1000
    amp_target: float = field(default_factory=default_swing_target)

    def __post_init__(self):
        if self.window < 2:
            raise ConfigurationError("window must be >= 2 samples")
        if self.amp_target <= 0:
            raise ConfigurationError("amp_target must be positive")


@dataclass
class SpectrumResult:
    frequencies: np.ndarray  # Hz
    amplitudes: np.ndarray  # N
    dominant_frequency: float  # Hz
    dominant_amplitude: float  # N
    degenerate: bool = False  # all-zero window: no dominant tone exists


def walk_reward(v: float, cfg: WalkRewardConfig) -> float:
    """exp(-sigma * (v - v_target)^2), in (0, 1]."""
    err = v - cfg.v_target
    return math.exp(-cfg.sigma * err * err)


def swing_reward(spec: SpectrumResult, cfg: SwingRewardConfig) -> float:
    """exp(-alpha * (A_dominant - A_target)^2), in (0, 1].

    A degenerate spectrum scores as amplitude zero.
    """
    amp = 0.0 if spec.degenerate else spec.dominant_amplitude
    err = amp - cfg.amp_target
    return math.exp(-cfg.alpha * err * err)


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT; length must be 2**k."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[0]
    if n == 0 or n & (n - 1):
        raise ConfigurationError(f"radix-2 FFT needs a power-of-two length, got {n}")
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=int)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = x[rev]
    half = 1
    while half < n:
        tw = np.exp(-2j * np.pi * np.arange(half) / (2 * half))
        out = out.reshape(-1, 2 * half)
        even = out[:, :half]
        odd = out[:, half:] * tw
        out = np.concatenate([even + odd, even - odd], axis=1).reshape(-1)
        half *= 2
    return out


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def force_spectrum(history: np.ndarray, sample_rate: float, window: int | None = None) -> SpectrumResult:
    """Single-sided amplitude spectrum of the last ``window`` force samples.

    Shorter histories are zero-padded on the left (young episodes).  The
    dominance search runs over non-DC bins inside the un-padded band
    [1/(window/fs), fs/2].
    """
    h = np.asarray(history, dtype=float)
    if h.ndim != 1:
        raise ConfigurationError("history must be a 1-D array")
    if window is None:
        window = h.shape[0]
    if h.shape[0] < window:
        h = np.concatenate([np.zeros(window - h.shape[0]), h])
    elif h.shape[0] > window:
        h = h[-window:]

    n_fft = _next_pow2(window)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / window)
    coherent_gain = hann.mean()  # 0.5 for Hann; compensates the taper
    padded = np.zeros(n_fft)
    padded[:window] = h * hann
    spec = fft_radix2(padded)[: n_fft // 2 + 1]
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    amps = np.abs(spec) / (window * coherent_gain)
    amps[1:-1] *= 2.0  # fold negative frequencies into the one-sided view

    # lowest resolvable tone: one full cycle inside the un-padded window
    f_min = sample_rate / window
    searchable = (freqs > 0) & (freqs >= f_min * 0.999)
    if not np.any(h) or not np.any(searchable):
        return SpectrumResult(freqs, amps, 0.0, 0.0, degenerate=True)
    masked = np.where(searchable, amps, -np.inf)
    k = int(np.argmax(masked))
    if amps[k] <= 0.0:
        return SpectrumResult(freqs, amps, 0.0, 0.0, degenerate=True)
    f_dom, a_dom = _interpolate_peak(freqs, amps, k)
    return SpectrumResult(freqs, amps, f_dom, a_dom)


def _interpolate_peak(freqs, amps, k):
    """Gaussian (log-parabolic) refinement of an off-bin peak.

    A tone rarely lands on a bin center; quadratic interpolation of the
    log magnitudes of the peak and its neighbors recovers the true tone
    amplitude to ~1% for a Hann window.
    """
    if k <= 0 or k >= len(amps) - 1 or amps[k - 1] <= 0 or amps[k + 1] <= 0:
        return float(freqs[k]), float(amps[k])
    la, lb, lc = math.log(amps[k - 1]), math.log(amps[k]), math.log(amps[k + 1])
    denom = la - 2 * lb + lc
    if denom >= 0:
        return float(freqs[k]), float(amps[k])
    delta = 0.5 * (la - lc) / denom
    delta = float(np.clip(delta, -0.5, 0.5))
    bin_width = freqs[1] - freqs[0]
    amp = math.exp(lb - 0.25 * (la - lc) * delta)
    return float(freqs[k] + delta * bin_width), float(amp)
