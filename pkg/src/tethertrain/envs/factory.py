"""Construction of randomized env sets and the held-out pseudo-real rig."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .params import DEFAULT_RANGES, PhysicsParams, sample_physics_matrix
from .walker import WalkerConsts, WalkerEnv

__all__ = ["EnvSet", "make_env_set", "make_pseudo_real", "PSEUDO_REAL_BASE"]


class EnvSet:
    """A vectorized walker plus its per-env parameter matrix.

    Behaves as a sequence of (PhysicsParams, env) pairs: indexing
    materializes a fresh single-env instance carrying row i's params, so
    any environment in the set is individually recoverable.
    """

    def __init__(self, param_matrix: np.ndarray, consts: WalkerConsts, seed: int, variant: str = "sim"):
        self.param_matrix = np.asarray(param_matrix, dtype=float)
        self.consts = consts
        self.seed = int(seed)
        self.variant = variant
        self.env = WalkerEnv(self.param_matrix, consts=consts, seed=seed, variant=variant)

    def __len__(self) -> int:
        return self.param_matrix.shape[0]

    def params_of(self, i: int) -> PhysicsParams:
        return PhysicsParams.from_vector(self.param_matrix[i])

    def __getitem__(self, i: int):
        if not 0 <= i < len(self):
            raise IndexError(i)
        single = WalkerEnv(
            self.param_matrix[i : i + 1], consts=self.consts, seed=self.seed + 1000 + i, variant=self.variant
        )
        return self.params_of(i), single


def make_env_set(
    n: int,
    seed: int,
    consts: WalkerConsts | None = None,
    ranges: dict | None = None,
    variant: str = "sim",
) -> EnvSet:
    """n independent walkers with distinct uniformly sampled params."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    matrix = sample_physics_matrix(n, rng, ranges)
    return EnvSet(matrix, consts or WalkerConsts(), seed, variant)


# Out-of-distribution anchor for the pseudo-real rig: every coordinate
# sits outside the training box, and the tether adds unmodeled stiction.
PSEUDO_REAL_BASE = PhysicsParams(
    friction_scale=0.45,
    damping_scale=2.3,
    armature_scale=2.2,
    friction_loss_scale=2.4,
    body_mass_delta=0.35,
    ee_mass=0.12,
)


def make_pseudo_real(seed: int, consts: WalkerConsts | None = None, command: float = 0.15) -> WalkerEnv:
    """Held-out single walker standing in for the physical robot.

    Parameters are fixed outside the randomization box (with a small
    seeded jitter so distinct rigs stay distinct), and the tether model
    gains a stiction term absent from every training environment.
    """
    rng = np.random.default_rng(seed)
    base = PSEUDO_REAL_BASE.to_vector()
    jitter = rng.uniform(0.98, 1.02, size=base.shape)
    vec = base * jitter
    # jitter must never push a coordinate back inside the training box
    for k, (name, (lo, hi)) in enumerate(DEFAULT_RANGES.items()):
        if base[k] > hi:
            vec[k] = max(vec[k], hi * 1.05)
        elif base[k] < lo:
            vec[k] = min(vec[k], lo * 0.95)
        else:
            vec[k] = max(vec[k], hi * 1.05)
    c = consts or WalkerConsts()
    c = WalkerConsts(**{**c.to_dict(), "tether_stiction": 1.5, "fixed_command": command})
    return WalkerEnv(vec[None, :], consts=c, seed=seed, variant="pseudo_real")
