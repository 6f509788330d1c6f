"""Network kernel tests: forwards vs scalar oracles, gradients vs finite
differences, Adam vs a hand-stepped trace, checkpoint round trips."""

import math

import numpy as np
import pytest

from tethertrain.errors import ConfigurationError, StateError, TrainingError
from tethertrain.nn import (
    AdamState,
    DynamicsEncoder,
    FilmLayer,
    GradientTape,
    Mlp,
    adam_step,
    backward,
    checkpoint_bytes,
    film_forward,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
)


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------

def scalar_mlp_forward(net, x):
    """Loop-based re-implementation of the forward pass, one scalar at a time."""
    a = [float(v) for v in x]
    n_layers = len(net.layer_sizes) - 1
    for l in range(n_layers):
        w, b = net.weights[l], net.biases[l]
        out = []
        for i in range(w.shape[0]):
            s = float(b[i])
            for j in range(w.shape[1]):
                s += float(w[i, j]) * a[j]
            out.append(math.tanh(s) if l < n_layers - 1 else s)
        a = out
    return np.array(a)


def scalar_film_forward(net, films, z, x):
    """Scalar oracle applying gamma*h + beta after each hidden activation."""
    a = [float(v) for v in x]
    n_layers = len(net.layer_sizes) - 1
    for l in range(n_layers):
        w, b = net.weights[l], net.biases[l]
        out = []
        for i in range(w.shape[0]):
            s = float(b[i])
            for j in range(w.shape[1]):
                s += float(w[i, j]) * a[j]
            out.append(math.tanh(s) if l < n_layers - 1 else s)
        if l < n_layers - 1:
            film = films[l]
            h = film.hidden_size
            mod = []
            for i in range(h):
                gamma = float(film.bias[i])
                beta = float(film.bias[h + i])
                for k in range(film.latent_dim):
                    gamma += float(film.weight[i, k]) * float(z[k])
                    beta += float(film.weight[h + i, k]) * float(z[k])
                mod.append(gamma * out[i] + beta)
            out = mod
        a = out
    return np.array(a)


def finite_difference(loss_fn, param, step=1e-5):
    """Central finite differences of a scalar loss w.r.t. one array."""
    g = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + step
        hi = loss_fn()
        param[idx] = orig - step
        lo = loss_fn()
        param[idx] = orig
        g[idx] = (hi - lo) / (2 * step)
        it.iternext()
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8))


def make_film_stack(layer_sizes, latent_dim, seed, randomize_films=True):
    rng = np.random.default_rng(seed)
    net = Mlp(layer_sizes, rng=rng, out_gain=1.0)
    films = [FilmLayer(h, latent_dim) for h in layer_sizes[1:-1]]
    if randomize_films:
        for f in films:
            f.weight[...] = rng.normal(scale=0.3, size=f.weight.shape)
            f.bias[...] = rng.normal(scale=0.3, size=f.bias.shape)
    return net, films, rng


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

class TestMlpForward:
    def test_zero_weight_net_outputs_zero(self):
        net = Mlp((3, 4, 2))
        for w in net.weights:
            w[...] = 0.0
        out = mlp_forward(net, np.array([0.5, -1.2, 3.0]))
        assert np.all(out == 0.0)

    def test_single_layer_identity_sum(self):
        net = Mlp((2, 1))
        net.weights[0][...] = 1.0
        net.biases[0][...] = 0.0
        out = mlp_forward(net, np.array([0.3, 0.7]))
        assert out[0] == pytest.approx(1.0, abs=1e-15)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(7)
        net = Mlp((5, 8, 6, 3), rng=rng, out_gain=1.0)
        x = rng.normal(size=5)
        got = mlp_forward(net, x)
        want = scalar_mlp_forward(net, x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_batched_rows_match_single_calls(self):
        rng = np.random.default_rng(29)
        net = Mlp((4, 6, 2), rng=rng, out_gain=1.0)
        xs = rng.normal(size=(5, 4))
        batch = mlp_forward(net, xs)
        for i in range(5):
            np.testing.assert_allclose(batch[i], mlp_forward(net, xs[i]), rtol=1e-14)

    def test_dimension_mismatch_raises(self):
        net = Mlp((4, 3))
        with pytest.raises(ConfigurationError):
            mlp_forward(net, np.zeros(5))

    def test_output_finite_for_seeded_net(self):
        rng = np.random.default_rng(11)
        net = Mlp((6, 32, 4), rng=rng)
        out = mlp_forward(net, rng.normal(size=(10, 6)))
        assert out.shape == (10, 4)
        assert np.all(np.isfinite(out))


class TestFilmForward:
    def test_fresh_films_are_exact_identity(self):
        # 100 random (net, z, input) triples; modulated and plain outputs
        # must agree bitwise at initialization.
        rng = np.random.default_rng(42)
        for _ in range(100):
            sizes = (rng.integers(2, 6), rng.integers(3, 10), rng.integers(3, 10), rng.integers(1, 5))
            net = Mlp(sizes, rng=rng, out_gain=1.0)
            films = [FilmLayer(h, 8) for h in sizes[1:-1]]
            z = rng.normal(size=8)
            x = rng.normal(size=sizes[0])
            plain = mlp_forward(net, x)
            modded = film_forward(net, films, z, x)
            assert np.array_equal(plain, modded)

    def test_annihilating_films_leave_output_bias(self):
        rng = np.random.default_rng(3)
        net = Mlp((4, 6, 5, 2), rng=rng, out_gain=1.0)
        net.biases[-1][...] = rng.normal(size=2)
        films = [FilmLayer(h, 4) for h in (6, 5)]
        for f in films:
            f.bias[...] = 0.0  # gamma = 0, beta = 0
        out = film_forward(net, films, np.ones(4), rng.normal(size=4))
        # Zeroing every hidden activation leaves only the output bias.
        np.testing.assert_allclose(out, net.biases[-1], rtol=0, atol=1e-15)

    def test_matches_scalar_oracle(self):
        net, films, rng = make_film_stack((5, 7, 6, 3), latent_dim=4, seed=19)
        z = rng.normal(size=4)
        x = rng.normal(size=5)
        got = film_forward(net, films, z, x)
        want = scalar_film_forward(net, films, z, x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_film_count_mismatch_raises(self):
        net = Mlp((3, 4, 4, 2))
        films = [FilmLayer(4, 2)]
        with pytest.raises(ConfigurationError):
            film_forward(net, films, np.zeros(2), np.zeros(3))

    def test_per_row_latents(self):
        net, films, rng = make_film_stack((3, 5, 2), latent_dim=4, seed=23)
        xs = rng.normal(size=(6, 3))
        zs = rng.normal(size=(6, 4))
        batch = film_forward(net, films, zs, xs)
        for i in range(6):
            row = film_forward(net, films, zs[i], xs[i])
            np.testing.assert_allclose(batch[i], row, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

class TestBackward:
    def test_backward_without_forward_raises(self):
        with pytest.raises(StateError):
            backward(GradientTape(), np.zeros(2))

    def test_constant_loss_gives_zero_grads(self):
        net, films, rng = make_film_stack((4, 6, 3), latent_dim=5, seed=1)
        tape = GradientTape()
        film_forward(net, films, rng.normal(size=5), rng.normal(size=(8, 4)), tape=tape)
        grads = backward(tape, np.zeros((8, 3)))
        for name, g in grads.items():
            assert np.all(g == 0.0), name

    def test_mlp_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        net = Mlp((4, 8, 6, 2), rng=rng, out_gain=1.0)
        x = rng.normal(size=(3, 4))
        target = rng.normal(size=(3, 2))

        def loss():
            out = mlp_forward(net, x)
            return 0.5 * np.sum((out - target) ** 2)

        tape = GradientTape()
        out = mlp_forward(net, x, tape=tape)
        grads = backward(tape, out - target)
        for l in range(3):
            for key, arr in ((f"w{l}", net.weights[l]), (f"b{l}", net.biases[l])):
                fd = finite_difference(loss, arr)
                assert rel_err(grads[key], fd) < 1e-4, key

    def test_film_and_latent_gradients_match_finite_differences(self):
        net, films, rng = make_film_stack((4, 6, 5, 2), latent_dim=3, seed=9)
        x = rng.normal(size=(4, 4))
        z = rng.normal(size=3)
        target = rng.normal(size=(4, 2))

        def loss():
            out = film_forward(net, films, z, x)
            return 0.5 * np.sum((out - target) ** 2)

        tape = GradientTape()
        out = film_forward(net, films, z, x, tape=tape)
        grads = backward(tape, out - target)
        for l, film in enumerate(films):
            for key, arr in ((f"film{l}_w", film.weight), (f"film{l}_b", film.bias)):
                fd = finite_difference(loss, arr)
                assert rel_err(grads[key], fd) < 1e-4, key
        fd_z = finite_difference(loss, z)
        assert rel_err(grads["z"].sum(axis=0), fd_z) < 1e-4

    def test_encoder_gradients_through_film_stack(self):
        # chain: mu -> encoder -> z -> film-modulated net -> loss
        rng = np.random.default_rng(13)
        enc = DynamicsEncoder(3, 4, hidden=(6,), rng=rng)
        net, films, _ = make_film_stack((5, 6, 2), latent_dim=4, seed=31)
        mu = rng.normal(size=(2, 3))
        x = rng.normal(size=(2, 5))
        target = rng.normal(size=(2, 2))

        def loss():
            z = enc.encode(mu)
            out = film_forward(net, films, z, x)
            return 0.5 * np.sum((out - target) ** 2)

        enc_tape, film_tape = GradientTape(), GradientTape()
        z = enc.encode(mu, tape=enc_tape)
        out = film_forward(net, films, z, x, tape=film_tape)
        dz = backward(film_tape, out - target)["z"]
        enc_grads = backward(enc_tape, dz)
        for l in range(2):
            for key, arr in ((f"w{l}", enc.net.weights[l]), (f"b{l}", enc.net.biases[l])):
                fd = finite_difference(loss, arr)
                assert rel_err(enc_grads[key], fd) < 1e-4, key

    def test_input_gradient(self):
        rng = np.random.default_rng(17)
        net = Mlp((3, 5, 2), rng=rng, out_gain=1.0)
        x = rng.normal(size=(1, 3))

        def loss():
            return float(np.sum(mlp_forward(net, x) ** 2)) / 2

        tape = GradientTape()
        out = mlp_forward(net, x, tape=tape)
        grads = backward(tape, out)
        fd = finite_difference(loss, x)
        assert rel_err(grads["_input"], fd) < 1e-4


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def reference_adam_trace(p0, gs, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Literal textbook Adam on a scalar, one value at a time."""
    p, m, v = float(p0), 0.0, 0.0
    out = []
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        state = AdamState(lr=0.1)
        params = {"p": np.array([1.0, -2.0])}
        adam_step(state, params, {"p": np.zeros(2)})
        np.testing.assert_array_equal(params["p"], [1.0, -2.0])
        assert state.step_count == 1

    def test_first_step_is_bias_corrected(self):
        state = AdamState(lr=0.1)
        params = {"p": np.array([0.0])}
        adam_step(state, params, {"p": np.array([1.0])})
        assert params["p"][0] == pytest.approx(-0.1, rel=1e-6)

    def test_matches_reference_trace(self):
        state = AdamState(lr=0.05)
        params = {"p": np.array([0.7])}
        gs = [0.3, 0.3]
        want = reference_adam_trace(0.7, gs, lr=0.05)
        got = []
        for g in gs:
            adam_step(state, params, {"p": np.array([g])})
            got.append(float(params["p"][0]))
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_nonfinite_gradient_names_param(self):
        state = AdamState(lr=0.1)
        params = {"bad_w": np.zeros(2)}
        with pytest.raises(TrainingError, match="bad_w"):
            adam_step(state, params, {"bad_w": np.array([np.nan, 0.0])})


# ---------------------------------------------------------------------------
# misc contracts
# ---------------------------------------------------------------------------

class TestDeterminismAndCheckpoint:
    def test_same_seed_same_parameters(self):
        a = Mlp((4, 8, 2), rng=np.random.default_rng(99))
        b = Mlp((4, 8, 2), rng=np.random.default_rng(99))
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_encoder_is_deterministic(self):
        enc = DynamicsEncoder(4, 6, rng=np.random.default_rng(2))
        mu = np.array([0.9, 1.4, 0.6, -0.2])
        np.testing.assert_array_equal(enc.encode(mu), enc.encode(mu))

    def test_checkpoint_round_trip_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(21)
        net = Mlp((3, 5, 2), rng=rng)
        tensors = net.params()
        meta = {"layer_sizes": list(net.layer_sizes), "latent_dim": 16}
        path = tmp_path / "ck.json"
        save_checkpoint(path, tensors, meta)
        loaded, meta2 = load_checkpoint(path)
        assert meta2 == meta
        assert checkpoint_bytes(loaded, meta2) == path.read_bytes()
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], tensors[name])

    def test_checkpoint_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 999, "tensors": {}}')
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)
