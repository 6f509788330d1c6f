"""Rapid-motor-adaptation baseline: concatenation conditioning plus a
history-convolution module that regresses the latent from recent
observation/action pairs.

Phase 1 trains a policy whose input is the observation concatenated with
a latent produced by a single linear projection of the physics params;
the PPO recipe, env set, seeds and budget are identical to the film
pipeline so only the conditioning mechanism differs.  Phase 2 freezes
phase 1 and fits the adaptation module by mean-squared error to the true
latents over on-policy rollouts.  The module's 1-D convolutions run along
the time axis of a 15-step window, kernel sizes (5, 3, 3), all strides 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import teacher as teach
from .envs import EnvSet
from .errors import ConfigurationError
from .nn import AdamState, DynamicsEncoder, GradientTape, Mlp, adam_step, backward, mlp_forward
from .rl import (
    CallableLatent,
    Critic,
    EncoderLatents,
    FixedLatent,
    PpoConfig,
    PpoLearner,
    WalkerTask,
    collect_rollout,
    evaluate_policy,
    gae,
)
from .adaptation import make_walker_task

__all__ = [
    "ConcatPolicy",
    "AdaptationModule",
    "HistoryLatent",
    "rma_phase1_train",
    "rma_phase2_train",
    "evaluate_conditioning",
    "table3_grid",
    "grid_to_csv",
]

HISTORY_WINDOW = 15
CONV_KERNELS = (5, 3, 3)
CONV_CHANNELS = (32, 32, 32)


class ConcatPolicy:
    """Gaussian actor over [observation, latent] concatenation."""

    def __init__(self, obs_dim, act_dim, latent_dim, hidden=(64, 64), rng=None, log_std_init=-0.7):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.latent_dim = int(latent_dim)
        self.net = Mlp((obs_dim + latent_dim, *hidden, act_dim), rng=rng)
        self.log_std = np.full(act_dim, float(log_std_init))
        self.films = None  # duck-typing with FilmPolicy

    def _join(self, obs, z):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if z is None:
            raise ConfigurationError("concat policy needs a latent")
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = np.broadcast_to(z, (obs.shape[0], z.shape[0]))
        return np.concatenate([obs, z], axis=1)

    def mean(self, obs, z=None, tape: GradientTape | None = None):
        return mlp_forward(self.net, self._join(obs, z), tape=tape)

    def sample(self, obs, z, rng):
        from .rl.policies import gaussian_log_prob

        mean = self.mean(obs, z)
        std = np.exp(self.log_std)
        actions = mean + std * rng.standard_normal(mean.shape)
        return actions, gaussian_log_prob(actions, mean, self.log_std)

    def params(self) -> dict:
        out = self.net.params()
        out["log_std"] = self.log_std
        return out

    def group_of(self, name: str) -> str:
        return "actor"

    def backward(self, tape: GradientTape, dmean) -> dict:
        grads = backward(tape, dmean)
        # route the concatenated tail of the input gradient to the latent
        grads["z"] = grads["_input"][:, self.obs_dim :]
        return grads

    def copy(self) -> "ConcatPolicy":
        dup = ConcatPolicy.__new__(ConcatPolicy)
        dup.obs_dim, dup.act_dim, dup.latent_dim = self.obs_dim, self.act_dim, self.latent_dim
        dup.net = self.net.copy()
        dup.log_std = self.log_std.copy()
        dup.films = None
        return dup

    def to_tensors(self):
        return {k: v.copy() for k, v in self.params().items()}

    def meta(self):
        return {
            "kind": "concat_policy",
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "latent_dim": self.latent_dim,
            "layer_sizes": list(self.net.layer_sizes),
        }


# ---------------------------------------------------------------------------
# 1-D convolution stack
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, T, C) -> (B, T-k+1, k*C) sliding windows along time."""
    b, t, c = x.shape
    t_out = t - k + 1
    out = np.empty((b, t_out, k * c))
    for j in range(k):
        out[:, :, j * c : (j + 1) * c] = x[:, j : j + t_out, :]
    return out


class AdaptationModule:
    """Latent regressor over the last 15 (obs, action) pairs.

    Three tanh conv layers (kernels 5/3/3, stride 1) shrink the window
    15 -> 11 -> 9 -> 7; the flattened features feed a two-layer head.
    Input features are normalized by statistics frozen at fit time.
    """

    def __init__(self, feat_dim: int, latent_dim: int, rng=None):
        rng = rng or np.random.default_rng(0)
        self.feat_dim = int(feat_dim)
        self.latent_dim = int(latent_dim)
        self.window = HISTORY_WINDOW
        self.conv_w = []
        self.conv_b = []
        c_in = feat_dim
        for k, c_out in zip(CONV_KERNELS, CONV_CHANNELS):
            lim = np.sqrt(6.0 / (k * c_in + c_out))
            self.conv_w.append(rng.uniform(-lim, lim, size=(c_out, k * c_in)))
            self.conv_b.append(np.zeros(c_out))
            c_in = c_out
        t_out = self.window
        for k in CONV_KERNELS:
            t_out = t_out - k + 1
        self.flat_dim = t_out * CONV_CHANNELS[-1]
        self.head = Mlp((self.flat_dim, 64, latent_dim), rng=rng, out_gain=1.0)
        self.feat_mean = np.zeros(feat_dim)
        self.feat_std = np.ones(feat_dim)

    @property
    def receptive_field(self) -> int:
        return sum(k - 1 for k in CONV_KERNELS) + 1

    def set_normalization(self, mean, std):
        self.feat_mean = np.asarray(mean, dtype=float)
        self.feat_std = np.maximum(np.asarray(std, dtype=float), 1e-6)

    def params(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"conv{i}_w"] = w
            out[f"conv{i}_b"] = b
        out.update(self.head.params(prefix="head_"))
        return out

    def forward(self, windows: np.ndarray, cache: list | None = None) -> np.ndarray:
        """windows: (B, 15, feat_dim) raw features -> (B, latent_dim)."""
        x = (windows - self.feat_mean) / self.feat_std
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            cols = _im2col(x, CONV_KERNELS[i])
            pre = cols @ w.T + b
            act = np.tanh(pre)
            if cache is not None:
                cache.append((cols, act))
            x = act
        flat = x.reshape(x.shape[0], -1)
        if cache is not None:
            head_tape = GradientTape()
            out = mlp_forward(self.head, flat, tape=head_tape)
            cache.append((flat, head_tape))
            return out
        return mlp_forward(self.head, flat)

    def backward(self, cache: list, dout: np.ndarray) -> dict:
        grads = {}
        flat, head_tape = cache[-1]
        head_grads = backward(head_tape, dout)
        for name, g in head_grads.items():
            if name in ("_input", "z"):
                continue
            grads[f"head_{name}"] = g
        dx = head_grads["_input"].reshape(-1, *cache[-2][1].shape[1:])
        for i in range(len(self.conv_w) - 1, -1, -1):
            cols, act = cache[i]
            dpre = dx * (1.0 - act * act)
            b, t_out, _ = dpre.shape
            dpre2 = dpre.reshape(b * t_out, -1)
            cols2 = cols.reshape(b * t_out, -1)
            grads[f"conv{i}_w"] = dpre2.T @ cols2
            grads[f"conv{i}_b"] = dpre2.sum(axis=0)
            dcols = dpre @ self.conv_w[i]  # (B, T_out, k*C_in)
            k = CONV_KERNELS[i]
            c_in = self.conv_w[i].shape[1] // k
            t_in = t_out + k - 1
            dx_prev = np.zeros((b, t_in, c_in))
            for j in range(k):
                dx_prev[:, j : j + t_out, :] += dcols[:, :, j * c_in : (j + 1) * c_in]
            dx = dx_prev
        return grads

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(np.atleast_3d(windows))


# ---------------------------------------------------------------------------
# phase 1: concat-conditioned PPO
# ---------------------------------------------------------------------------

def rma_phase1_train(
    env_set: EnvSet,
    cfg: PpoConfig,
    total_steps: int,
    latent_dim: int = 16,
    seed: int = 0,
    log=None,
    actor_hidden=(64, 64),
    critic_hidden=(64, 64, 64),
):
    """Same training loop as the film stage 1; only conditioning differs.

    The projection layer is a single linear map from physics params to
    the latent, trained jointly (the paper's phrase names no
    nonlinearity).
    """
    from .envs import param_normalization

    env = env_set.env
    rng = np.random.default_rng(seed + 100)
    center, scale = param_normalization()
    encoder = DynamicsEncoder(env_set.param_matrix.shape[1], latent_dim, hidden=(),
                              rng=np.random.default_rng(seed + 1),
                              input_center=center, input_scale=scale)
    policy = ConcatPolicy(env.obs_dim, env.act_dim, latent_dim, hidden=actor_hidden,
                          rng=np.random.default_rng(seed + 2), log_std_init=cfg.log_std_init)
    critic = Critic(env.priv_dim, hidden=critic_hidden, rng=np.random.default_rng(seed + 3))
    source = EncoderLatents(encoder, env_set.param_matrix)
    learner = PpoLearner(policy, critic, cfg, frozenset({"actor", "encoder", "critic"}), source)
    task = make_walker_task(env)
    history = []
    n_updates = max(1, total_steps // cfg.batch_size)
    for u in range(n_updates):
        batch = collect_rollout(policy, critic, task, source, cfg.batch_size, rng)
        gae(batch, cfg.gamma, cfg.lam)
        stats = learner.ppo_update(batch)
        stats["update"] = u
        history.append(stats)
        if log is not None:
            log(stats)
    return {
        "policy": policy,
        "encoder": encoder,
        "critic": critic,
        "env_set": env_set,
        "history": history,
    }


# ---------------------------------------------------------------------------
# phase 2: supervised latent regression from history
# ---------------------------------------------------------------------------

class HistoryLatent:
    """Online latent source: predicts from each env's recent history.

    The collector calls ``observe`` after every step; predictions use the
    last 15 (obs, action) pairs, zero-padded at episode starts.
    """

    def __init__(self, module: AdaptationModule, n_envs: int, obs_dim: int, act_dim: int):
        self.module = module
        self.latent_dim = module.latent_dim
        self.n = n_envs
        self.feat_dim = obs_dim + act_dim
        self.buf = np.zeros((n_envs, module.window, self.feat_dim))

    def per_env(self, env_indices):
        idx = np.asarray(env_indices, dtype=int)
        return self.module.predict(self.buf[idx])

    def observe(self, obs, actions, done):
        self.buf[:, :-1, :] = self.buf[:, 1:, :]
        self.buf[:, -1, :] = np.concatenate([obs, actions], axis=1)
        done = np.asarray(done, dtype=bool)
        if done.any():
            self.buf[done] = 0.0


def collect_history_dataset(policy, critic, env_set: EnvSet, encoder, steps: int, seed: int):
    """On-policy (history window, true latent) pairs for the regression."""
    env = env_set.env
    source = EncoderLatents(encoder, env_set.param_matrix)
    task = make_walker_task(env)
    rng = np.random.default_rng(seed)
    n = env.n
    feat_dim = env.obs_dim + env.act_dim
    buf = np.zeros((n, HISTORY_WINDOW, feat_dim))
    windows = []
    targets = []
    all_idx = np.arange(n)
    for _ in range(steps):
        obs = task.obs
        z = source.per_env(all_idx)
        actions, _ = policy.sample(obs, z, rng)
        task.pre_step(0)
        new_obs, new_priv, reward, done, failed, info = task.step(actions)
        buf[:, :-1, :] = buf[:, 1:, :]
        buf[:, -1, :] = np.concatenate([obs, actions], axis=1)
        windows.append(buf.copy())
        targets.append(z.copy())
        if done.any():
            buf[done] = 0.0
        task.obs = new_obs
        task.priv = new_priv
        task.reset_done(done)
    return np.concatenate(windows, axis=0), np.concatenate(targets, axis=0)


def rma_phase2_train(
    phase1: dict,
    steps: int = 2000,
    epochs: int = 60,
    lr: float = 1e-3,
    seed: int = 0,
    batch_size: int = 512,
    log=None,
):
    """Fit the adaptation module to reconstruct the true latent by MSE."""
    env_set = phase1["env_set"]
    env = env_set.env
    windows, targets = collect_history_dataset(
        phase1["policy"], phase1["critic"], env_set, phase1["encoder"], steps, seed + 50
    )
    module = AdaptationModule(env.obs_dim + env.act_dim, phase1["encoder"].latent_dim,
                              rng=np.random.default_rng(seed + 60))
    flat = windows.reshape(-1, windows.shape[-1])
    module.set_normalization(flat.mean(axis=0), flat.std(axis=0))
    opt = AdamState(lr)
    rng = np.random.default_rng(seed + 70)
    n = windows.shape[0]
    loss_trace = []
    for ep in range(epochs):
        order = rng.permutation(n)
        ep_loss = 0.0
        nb = 0
        for lo in range(0, n, batch_size):
            sel = order[lo : lo + batch_size]
            cache = []
            pred = module.forward(windows[sel], cache=cache)
            err = pred - targets[sel]
            loss = float(np.mean(err * err))
            grads = module.backward(cache, 2.0 * err / (err.shape[0] * err.shape[1]))
            adam_step(opt, module.params(), grads)
            ep_loss += loss
            nb += 1
        loss_trace.append(ep_loss / nb)
        if log is not None:
            log({"epoch": ep, "mse": loss_trace[-1]})
    return module, loss_trace


# ---------------------------------------------------------------------------
# the comparison grid
# ---------------------------------------------------------------------------

def evaluate_conditioning(policy, env_set: EnvSet, latent_source, eval_steps: int, seed: int):
    """Deterministic evaluation of one (policy, latent source) cell."""
    fresh = EnvSet(env_set.param_matrix, env_set.consts, env_set.seed)
    task = make_walker_task(fresh.env)
    if isinstance(latent_source, HistoryLatent):
        latent_source = HistoryLatent(
            latent_source.module, fresh.env.n, fresh.env.obs_dim, fresh.env.act_dim
        )
    r = _evaluate_with_observe(policy, task, latent_source, eval_steps, seed)
    return r


def _evaluate_with_observe(policy, task, source, steps, seed):
    env = task.env
    all_idx = np.arange(env.n)
    total = 0.0
    failures = 0
    for t in range(steps):
        z = source.per_env(all_idx)
        actions = policy.mean(task.obs, z)
        obs_before = task.obs
        task.pre_step(t)
        obs, priv, reward, done, failed, info = task.step(actions)
        if hasattr(source, "observe"):
            source.observe(obs_before, actions, done)
        total += float(reward.sum())
        failures += int(np.asarray(failed).sum())
        task.obs = obs
        task.priv = priv
        task.reset_done(done)
    return {"mean_step_reward": total / (steps * env.n), "failures": failures}


def table3_grid(cells: dict, eval_steps: int, seeds, builders) -> dict:
    """Evaluate {conditioning} x {latent source} over seeds.

    ``builders`` maps (row, col) -> callable(seed) returning
    (policy, env_set, latent_source); missing cells are reported absent
    and the grid continues.
    """
    rows = ("concat", "film")
    cols = ("ground_truth", "adaptation_module", "universal")
    out = {}
    for row in rows:
        for col in cols:
            key = (row, col)
            if key not in builders:
                out[key] = None
                continue
            vals = []
            for seed in seeds:
                policy, env_set, source = builders[key](seed)
                r = evaluate_conditioning(policy, env_set, source, eval_steps, seed)
                vals.append(r["mean_step_reward"])
            out[key] = (float(np.mean(vals)), float(np.std(vals)), len(vals))
    return out


def grid_to_csv(grid: dict) -> str:
    rows = ("concat", "film")
    cols = ("ground_truth", "adaptation_module", "universal")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["conditioning"] + list(cols))
    for row in rows:
        cells = []
        for col in cols:
            cell = grid.get((row, col))
            if cell is None:
                cells.append("absent")
            else:
                m, s, n = cell
                cells.append(f"{m:.4f}±{s:.4f} (n={n})")
        writer.writerow([row] + cells)
    return buf.getvalue()
