"""Physics-parameter vectors, their randomization ranges, and env sets."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ConfigurationError

# sampling ranges: multiplicative scales plus two additive masses (kg)
DEFAULT_RANGES = {
    "friction_scale": (0.5, 2.0),
    "damping_scale": (0.5, 2.0),
    "armature_scale": (0.5, 2.0),
    "friction_loss_scale": (0.5, 2.0),
    "body_mass_delta": (-0.3, 0.3),
    "ee_mass": (0.0, 0.1),
}

PARAM_NAMES = tuple(DEFAULT_RANGES)

__all__ = [
    "DEFAULT_RANGES",
    "PARAM_NAMES",
    "PhysicsParams",
    "sample_physics",
    "sample_physics_matrix",
    "nominal_params",
    "param_normalization",
]


def param_normalization(ranges: dict | None = None):
    """(center, half-width) per coordinate, for encoder input scaling."""
    merged = dict(DEFAULT_RANGES)
    merged.update(ranges or {})
    lo = np.array([merged[name][0] for name in PARAM_NAMES])
    hi = np.array([merged[name][1] for name in PARAM_NAMES])
    return (lo + hi) / 2.0, np.maximum((hi - lo) / 2.0, 1e-9)


@dataclass(frozen=True)
class PhysicsParams:
    """One environment's randomization vector.

    The four scales multiply nominal joint/contact properties; the two
    masses add to the torso and to the tether attachment hardware.
    """

    friction_scale: float = 1.0
    damping_scale: float = 1.0
    armature_scale: float = 1.0
    friction_loss_scale: float = 1.0
    body_mass_delta: float = 0.0
    ee_mass: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "PhysicsParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(PARAM_NAMES),):
            raise ConfigurationError(f"expected a {len(PARAM_NAMES)}-vector, got {vec.shape}")
        return cls(**{name: float(v) for name, v in zip(PARAM_NAMES, vec)})


def nominal_params() -> PhysicsParams:
    return PhysicsParams()


def _check_ranges(ranges: dict) -> dict:
    merged = dict(DEFAULT_RANGES)
    merged.update(ranges or {})
    for name, (lo, hi) in merged.items():
        if name not in DEFAULT_RANGES:
            raise ConfigurationError(f"unknown physics parameter {name!r}")
        if lo > hi:
            raise ConfigurationError(f"inverted range for {name}: [{lo}, {hi}]")
    return merged


def sample_physics(rng: np.random.Generator, ranges: dict | None = None) -> PhysicsParams:
    """Draw one parameter vector, each field uniform in its range."""
    merged = _check_ranges(ranges or {})
    vals = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in merged.items()}
    return PhysicsParams(**vals)


def sample_physics_matrix(n: int, rng: np.random.Generator, ranges: dict | None = None) -> np.ndarray:
    """(n, 6) matrix of parameter vectors; row i is env i."""
    if n < 1:
        raise ConfigurationError("need at least one environment")
    merged = _check_ranges(ranges or {})
    cols = [rng.uniform(lo, hi, size=n) for lo, hi in merged.values()]
    return np.stack(cols, axis=1)
