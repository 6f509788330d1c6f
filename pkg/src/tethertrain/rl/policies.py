"""Gaussian policies and the value net, built on the network kernel.

FilmPolicy is the latent-modulated actor: each hidden activation of the
MLP body is rescaled and shifted by per-layer coefficients generated
from the dynamics latent.  With latent_dim = 0 it degrades to a plain
unconditioned actor (the films vanish), which is what the no-latent
baselines train.  Action noise is a state-independent learned log-std.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from ..nn import FilmLayer, GradientTape, Mlp, backward, film_forward, mlp_forward

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_prob(actions, mean, log_std):
    """Row-wise log density of a diagonal Gaussian."""
    inv_var = np.exp(-2.0 * log_std)
    diff = actions - mean
    return -0.5 * np.sum(diff * diff * inv_var + 2.0 * log_std + LOG_2PI, axis=-1)


def gaussian_entropy(log_std):
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


class FilmPolicy:
    def __init__(self, obs_dim, act_dim, latent_dim=0, hidden=(64, 64), rng=None, log_std_init=-0.7):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.latent_dim = int(latent_dim)
        self.net = Mlp((obs_dim, *hidden, act_dim), rng=rng)
        self.films = (
            [FilmLayer(h, latent_dim) for h in hidden] if latent_dim > 0 else None
        )
        self.log_std = np.full(act_dim, float(log_std_init))

    # -- forward -------------------------------------------------------------

    def mean(self, obs, z=None, tape: GradientTape | None = None):
        if self.films is not None:
            if z is None:
                raise ConfigurationError("latent-conditioned policy needs z")
            return film_forward(self.net, self.films, z, obs, tape=tape)
        return mlp_forward(self.net, obs, tape=tape)

    def sample(self, obs, z, rng: np.random.Generator):
        mean = self.mean(obs, z)
        std = np.exp(self.log_std)
        noise = rng.standard_normal(mean.shape)
        actions = mean + std * noise
        return actions, gaussian_log_prob(actions, mean, self.log_std)

    # -- parameters ------------------------------------------------------------

    def params(self) -> dict:
        out = self.net.params()
        if self.films is not None:
            for l, film in enumerate(self.films):
                out.update(film.params(prefix=f"film{l}_"))
        out["log_std"] = self.log_std
        return out

    def group_of(self, name: str) -> str:
        return "film" if name.startswith("film") else "actor"

    def backward(self, tape: GradientTape, dmean) -> dict:
        return backward(tape, dmean)

    def copy(self) -> "FilmPolicy":
        dup = FilmPolicy.__new__(FilmPolicy)
        dup.obs_dim, dup.act_dim, dup.latent_dim = self.obs_dim, self.act_dim, self.latent_dim
        dup.net = self.net.copy()
        dup.films = [f.copy() for f in self.films] if self.films is not None else None
        dup.log_std = self.log_std.copy()
        return dup

    # -- persistence -----------------------------------------------------------

    def to_tensors(self) -> dict:
        return {k: v.copy() for k, v in self.params().items()}

    def meta(self) -> dict:
        return {
            "kind": "film_policy",
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "latent_dim": self.latent_dim,
            "layer_sizes": list(self.net.layer_sizes),
        }

    @classmethod
    def from_tensors(cls, tensors: dict, meta: dict) -> "FilmPolicy":
        hidden = tuple(meta["layer_sizes"][1:-1])
        pol = cls(meta["obs_dim"], meta["act_dim"], meta["latent_dim"], hidden=hidden)
        for name, value in pol.params().items():
            value[...] = tensors[name]
        return pol


class Critic:
    """Plain MLP value function over the (privileged) observation."""

    def __init__(self, in_dim, hidden=(64, 64, 64), rng=None):
        self.in_dim = int(in_dim)
        self.net = Mlp((in_dim, *hidden, 1), rng=rng, out_gain=1.0)

    def value(self, obs, tape: GradientTape | None = None):
        out = mlp_forward(self.net, obs, tape=tape)
        return out[..., 0]

    def params(self) -> dict:
        return self.net.params()

    def backward(self, tape: GradientTape, dvalue) -> dict:
        dv = np.asarray(dvalue, dtype=float)
        return backward(tape, dv[..., None])

    def copy(self) -> "Critic":
        dup = Critic.__new__(Critic)
        dup.in_dim = self.in_dim
        dup.net = self.net.copy()
        return dup

    def to_tensors(self) -> dict:
        return {k: v.copy() for k, v in self.params().items()}

    def meta(self) -> dict:
        return {"kind": "critic", "in_dim": self.in_dim, "layer_sizes": list(self.net.layer_sizes)}

    @classmethod
    def from_tensors(cls, tensors: dict, meta: dict) -> "Critic":
        hidden = tuple(meta["layer_sizes"][1:-1])
        crit = cls(meta["in_dim"], hidden=hidden)
        for name, value in crit.params().items():
            value[...] = tensors[name]
        return crit


def params_hash(obj) -> str:
    """Stable hash of a parameter dict, for artifact manifests."""
    import hashlib

    h = hashlib.sha256()
    params = obj.params() if hasattr(obj, "params") else obj
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype=np.float64).tobytes())
    return h.hexdigest()
