"""Core RL data containers."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ConfigurationError


@dataclass
class Transition:
    """One step of experience as persisted to offline datasets."""

    obs: np.ndarray
    priv: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool
    env_index: int


@dataclass
class RolloutBatch:
    """Time-major (T, N, ...) arrays from one collection pass.

    ``advantages`` and ``returns`` stay None until the GAE pass fills
    them.  ``bootstrap_value`` holds V(s_T) per env for the tail.
    """

    obs: np.ndarray  # (T, N, obs_dim)
    priv: np.ndarray  # (T, N, priv_dim)
    actions: np.ndarray  # (T, N, act_dim)
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    dones: np.ndarray  # (T, N) bool
    env_index: np.ndarray  # (T, N) int
    bootstrap_value: np.ndarray  # (N,)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list = field(default_factory=list)
    episode_failures: int = 0

    @property
    def horizon(self) -> int:
        return self.obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.obs.shape[1]

    @property
    def size(self) -> int:
        return self.horizon * self.n_envs

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape(self.size, *arr.shape[2:])


@dataclass
class PpoConfig:
    batch_size: int = 1024
    epochs: int = 20
    clip: float = 0.2
    entropy_coef: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    film_lr_ratio: float = 0.5  # film lr = ratio * actor lr
    encoder_lr: float | None = None  # None -> actor lr
    latent_lr: float = 0.02
    gamma: float = 0.99
    lam: float = 0.95
    normalize_adv: bool = True
    # Removing each env's mean advantage strips the per-env "luck" term
    # from the gradient (its expectation is zero, its variance couples
    # straight into the latent pathway of a conditioned policy).
    center_adv_per_env: bool = True
    log_std_init: float = -0.7
    log_std_min: float = -3.0
    log_std_max: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ConfigurationError(f"clip must be in (0, 1), got {self.clip}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)
