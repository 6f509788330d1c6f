"""Latent sources: where the policy's conditioning vector comes from.

The collector and the learner share one source so that acting and
updating always see the same latents.  Sources hold live references
(the encoder's weights, the trainable universal vector), so optimizer
steps propagate without re-wiring.
"""

from __future__ import annotations

import numpy as np

from ..nn import DynamicsEncoder


class NoLatent:
    latent_dim = 0

    def per_env(self, env_indices):
        return None


class EncoderLatents:
    """Per-env true latents z_i = encoder(mu_i), recomputed on demand."""

    def __init__(self, encoder: DynamicsEncoder, mu_matrix: np.ndarray):
        self.encoder = encoder
        self.mu = np.asarray(mu_matrix, dtype=float)
        self.latent_dim = encoder.latent_dim

    def per_env(self, env_indices):
        return self.encoder.encode(self.mu[np.asarray(env_indices, dtype=int)])

    def all_latents(self) -> np.ndarray:
        return self.encoder.encode(self.mu)


class FixedLatent:
    """One shared latent for every env; the array is the trainable object."""

    def __init__(self, vector: np.ndarray):
        self.vector = np.asarray(vector, dtype=float)
        self.latent_dim = self.vector.shape[0]

    def per_env(self, env_indices):
        n = len(np.asarray(env_indices))
        return np.broadcast_to(self.vector, (n, self.latent_dim))


class ZeroLatent:
    def __init__(self, latent_dim: int):
        self.latent_dim = int(latent_dim)

    def per_env(self, env_indices):
        n = len(np.asarray(env_indices))
        return np.zeros((n, self.latent_dim))


class CallableLatent:
    """Latents produced per step by an arbitrary function of env indices."""

    def __init__(self, fn, latent_dim: int):
        self.fn = fn
        self.latent_dim = int(latent_dim)

    def per_env(self, env_indices):
        return self.fn(np.asarray(env_indices, dtype=int))
