"""Minimal dense-network kernel with hand-written reverse-mode gradients.

The networks trained here are small and their topology is fixed (an MLP
body, optionally modulated per hidden layer by feature-wise scale/shift
generated from a conditioning vector), so instead of a general autodiff
graph each forward records its intermediates on a GradientTape and
`backward` replays the fixed structure in reverse.

Conventions:
  * weights are stored row-major with shape (fan_out, fan_in); a batched
    forward computes ``x @ W.T + b``.
  * hidden activations are tanh, the output layer is linear.
  * inputs may be a single vector ``(n,)`` or a batch ``(B, n)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, StateError

__all__ = [
    "Mlp",
    "FilmLayer",
    "DynamicsEncoder",
    "GradientTape",
    "mlp_forward",
    "film_forward",
    "backward",
]


def _init_weight(rng: np.random.Generator, fan_out: int, fan_in: int, gain: float) -> np.ndarray:
    # Variance-preserving scaled-uniform init (Glorot-style limit).
    lim = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


class Mlp:
    """Fully connected net: tanh hidden layers, identity output layer.

    ``layer_sizes`` lists every layer width including input and output,
    e.g. (16, 64, 64, 4) builds two tanh hidden layers of 64 units.
    """

    def __init__(self, layer_sizes, rng=None, hidden_gain=1.0, out_gain=0.1):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"layer_sizes must be >=2 positive ints, got {layer_sizes}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.layer_sizes = sizes
        self.weights = []
        self.biases = []
        n_layers = len(sizes) - 1
        for l in range(n_layers):
            gain = out_gain if l == n_layers - 1 else hidden_gain
            self.weights.append(_init_weight(rng, sizes[l + 1], sizes[l], gain))
            self.biases.append(np.zeros(sizes[l + 1]))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    def params(self, prefix: str = "") -> dict:
        out = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{l}"] = w
            out[f"{prefix}b{l}"] = b
        return out

    def set_params(self, values: dict, prefix: str = "") -> None:
        for l in range(len(self.weights)):
            self.weights[l][...] = values[f"{prefix}w{l}"]
            self.biases[l][...] = values[f"{prefix}b{l}"]

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.layer_sizes = self.layer_sizes
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup


class FilmLayer:
    """Per-layer scale/shift generator: maps a latent z to (gamma, beta).

    A single (2H, latent_dim) weight produces both blocks; the first H
    rows feed gamma, the last H feed beta.  Freshly constructed layers
    have zero weights, gamma bias one and beta bias zero, so they leave
    the modulated network bit-identical to the unmodulated one.
    """

    def __init__(self, hidden_size: int, latent_dim: int):
        if hidden_size <= 0 or latent_dim <= 0:
            raise ConfigurationError("hidden_size and latent_dim must be positive")
        self.hidden_size = int(hidden_size)
        self.latent_dim = int(latent_dim)
        self.weight = np.zeros((2 * hidden_size, latent_dim))
        self.bias = np.concatenate([np.ones(hidden_size), np.zeros(hidden_size)])

    def gamma_beta(self, z: np.ndarray):
        """Return (gamma, beta) for latent batch z of shape (B, latent_dim)."""
        gb = z @ self.weight.T + self.bias
        h = self.hidden_size
        return gb[:, :h], gb[:, h:]

    def params(self, prefix: str = "") -> dict:
        return {f"{prefix}w": self.weight, f"{prefix}b": self.bias}

    def copy(self) -> "FilmLayer":
        dup = FilmLayer(self.hidden_size, self.latent_dim)
        dup.weight = self.weight.copy()
        dup.bias = self.bias.copy()
        return dup


class DynamicsEncoder:
    """Deterministic MLP mapping a physics-parameter vector to a latent.

    Inputs can be affinely normalized (center/scale per coordinate);
    without it the latents of a sampled batch share one large common
    component and their per-env spread is too small to condition on.
    """

    def __init__(self, param_dim: int, latent_dim: int, hidden=(32,), rng=None,
                 input_center=None, input_scale=None):
        self.net = Mlp((param_dim, *hidden, latent_dim), rng=rng, out_gain=1.0)
        self.param_dim = int(param_dim)
        self.latent_dim = int(latent_dim)
        self.input_center = (
            np.zeros(param_dim) if input_center is None else np.asarray(input_center, dtype=float)
        )
        self.input_scale = (
            np.ones(param_dim) if input_scale is None else np.asarray(input_scale, dtype=float)
        )

    def encode(self, mu: np.ndarray, tape: "GradientTape | None" = None) -> np.ndarray:
        x = (np.asarray(mu, dtype=float) - self.input_center) / self.input_scale
        return mlp_forward(self.net, x, tape=tape)

    def params(self, prefix: str = "enc.") -> dict:
        return self.net.params(prefix)

    def copy(self) -> "DynamicsEncoder":
        dup = DynamicsEncoder.__new__(DynamicsEncoder)
        dup.net = self.net.copy()
        dup.param_dim = self.param_dim
        dup.latent_dim = self.latent_dim
        dup.input_center = self.input_center.copy()
        dup.input_scale = self.input_scale.copy()
        return dup


class GradientTape:
    """Records one forward pass; `backward` fills per-parameter gradients.

    Gradient arrays mirror parameter shapes.  The tape must be re-used
    only after `zero()` (or by recording a new forward, which replaces
    the previous record).
    """

    def __init__(self):
        self._record = None
        self.grads: dict = {}

    def zero(self) -> None:
        self._record = None
        self.grads = {}


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ConfigurationError(f"expected 1-D or 2-D input, got shape {x.shape}")


def mlp_forward(net: Mlp, x, tape: GradientTape | None = None):
    """Plain forward pass. Input length must equal the first layer size."""
    xb, squeeze = _as_batch(x)
    if xb.shape[1] != net.in_dim:
        raise ConfigurationError(
            f"input has {xb.shape[1]} features, net expects {net.in_dim}"
        )
    acts = []  # per hidden layer: (layer input, tanh activation)
    a = xb
    for l in range(net.n_hidden):
        pre = a @ net.weights[l].T + net.biases[l]
        h = np.tanh(pre)
        acts.append((a, h))
        a = h
    out = a @ net.weights[-1].T + net.biases[-1]
    if tape is not None:
        tape._record = {"kind": "mlp", "net": net, "acts": acts, "last_in": a}
        tape.grads = {}
    return out[0] if squeeze else out


def film_forward(net: Mlp, films, z, x, tape: GradientTape | None = None):
    """Forward pass with each hidden activation replaced by gamma*h + beta.

    ``films`` holds one FilmLayer per hidden layer; ``z`` is a latent of
    shape (latent_dim,) shared across the batch or (B, latent_dim) with
    one latent per row.
    """
    xb, squeeze = _as_batch(x)
    if xb.shape[1] != net.in_dim:
        raise ConfigurationError(
            f"input has {xb.shape[1]} features, net expects {net.in_dim}"
        )
    films = list(films)
    if len(films) != net.n_hidden:
        raise ConfigurationError(
            f"got {len(films)} film layers for {net.n_hidden} hidden layers"
        )
    z = np.asarray(z, dtype=float)
    zb = np.broadcast_to(z[None, :], (xb.shape[0], z.shape[0])) if z.ndim == 1 else z
    if films and zb.shape[1] != films[0].latent_dim:
        raise ConfigurationError(
            f"latent has {zb.shape[1]} dims, film layers expect {films[0].latent_dim}"
        )
    acts = []  # per hidden layer: (layer input, tanh activation, gamma)
    a = xb
    for l in range(net.n_hidden):
        pre = a @ net.weights[l].T + net.biases[l]
        h = np.tanh(pre)
        gamma, beta = films[l].gamma_beta(zb)
        mod = gamma * h + beta
        acts.append((a, h, gamma))
        a = mod
    out = a @ net.weights[-1].T + net.biases[-1]
    if tape is not None:
        tape._record = {
            "kind": "film",
            "net": net,
            "films": films,
            "z": zb,
            "acts": acts,
            "last_in": a,
            "z_was_shared": z.ndim == 1,
        }
        tape.grads = {}
    return out[0] if squeeze else out


def backward(tape: GradientTape, loss_grad) -> dict:
    """Backpropagate d(loss)/d(output) through the recorded forward pass.

    Returns a dict of gradients keyed like the owning objects' params():
    ``w0``/``b0``... for the MLP, ``film0_w``/``film0_b``... for the film
    layers, plus ``z`` (per-row latent gradient, shape (B, latent_dim))
    and ``_input`` (gradient w.r.t. the network input).
    """
    rec = tape._record
    if rec is None:
        raise StateError("backward() called with no recorded forward pass")
    net = rec["net"]
    dout, _ = _as_batch(loss_grad)
    if dout.shape[1] != net.out_dim:
        raise ConfigurationError(
            f"loss_grad has {dout.shape[1]} features, net output is {net.out_dim}"
        )
    grads: dict = {}
    da = dout
    # output layer
    last_in = rec["last_in"]
    n = net.n_hidden
    grads[f"w{n}"] = da.T @ last_in
    grads[f"b{n}"] = da.sum(axis=0)
    da = da @ net.weights[-1]

    if rec["kind"] == "film":
        zb = rec["z"]
        dz = np.zeros_like(zb)
        for l in range(n - 1, -1, -1):
            a_in, h, gamma = rec["acts"][l]
            film = rec["films"][l]
            hsz = film.hidden_size
            dgamma = da * h
            dbeta = da
            grads[f"film{l}_w"] = np.concatenate([dgamma.T @ zb, dbeta.T @ zb], axis=0)
            grads[f"film{l}_b"] = np.concatenate([dgamma.sum(axis=0), dbeta.sum(axis=0)])
            dz += dgamma @ film.weight[:hsz] + dbeta @ film.weight[hsz:]
            dh = da * gamma
            dpre = dh * (1.0 - h * h)
            grads[f"w{l}"] = dpre.T @ a_in
            grads[f"b{l}"] = dpre.sum(axis=0)
            da = dpre @ net.weights[l]
        grads["z"] = dz
    else:
        for l in range(n - 1, -1, -1):
            a_in, h = rec["acts"][l]
            dpre = da * (1.0 - h * h)
            grads[f"w{l}"] = dpre.T @ a_in
            grads[f"b{l}"] = dpre.sum(axis=0)
            da = dpre @ net.weights[l]
    grads["_input"] = da
    tape.grads = grads
    return grads
