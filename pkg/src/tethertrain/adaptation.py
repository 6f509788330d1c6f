"""Three-stage dynamics-latent adaptation pipeline.

Stage 1 trains a latent-conditioned policy jointly with its encoder and
critic across a randomized env set.  Stage 2 freezes everything except a
single shared latent, initialized at the mean of the per-env latents,
and optimizes it for summed return across the set.  Stage 3 moves to the
held-out rig: actor and films stay frozen, the latent fine-tunes under
the arm curriculum with a critic trained from scratch on the rig's
observation layout.

Artifacts persist as checkpoint files plus a manifest of content hashes;
a later stage refuses to start from a directory whose hashes no longer
match (a half-overwritten or tampered artifact set).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import teacher as teach
from .envs import EnvSet, WalkerConsts, WalkerEnv, make_env_set, param_normalization
from .errors import ConfigurationError, CurriculumFault
from .nn import DynamicsEncoder, checkpoint_bytes, load_checkpoint, save_checkpoint
from .rl import (
    Critic,
    EncoderLatents,
    FilmPolicy,
    FixedLatent,
    NoLatent,
    PpoConfig,
    PpoLearner,
    WalkerTask,
    ZeroLatent,
    collect_rollout,
    evaluate_policy,
    gae,
    params_hash,
)

__all__ = [
    "StageOneArtifacts",
    "UniversalLatent",
    "ResidualPolicy",
    "RigVariant",
    "stage1_train",
    "latent_utilization_gap",
    "stage2_universal",
    "stage3_finetune",
    "residual_baseline",
    "rig_finetune",
    "make_walker_task",
]


def make_walker_task(env, schedule_active=False, reward_source="true", telemetry=None):
    ts = teach.make_teacher(env.n, env.nominal_arm_anchor())
    return WalkerTask(
        env,
        ts,
        schedule_active=schedule_active,
        reward_source=reward_source,
        telemetry=telemetry,
    )


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _write_manifest(out_dir: Path, files: dict, extra: dict | None = None):
    manifest = {"files": {}, "extra": extra or {}}
    for name in sorted(files):
        manifest["files"][name] = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _verify_manifest(out_dir: Path):
    mpath = out_dir / "manifest.json"
    if not mpath.exists():
        raise ConfigurationError(f"no manifest in {out_dir}")
    manifest = json.loads(mpath.read_text())
    for name, want in manifest["files"].items():
        got = hashlib.sha256((out_dir / name).read_bytes()).hexdigest()
        if got != want:
            raise ConfigurationError(f"manifest hash mismatch for {name} in {out_dir}")
    return manifest


@dataclass
class StageOneArtifacts:
    policy: FilmPolicy
    encoder: DynamicsEncoder | None
    critic: Critic
    param_matrix: np.ndarray
    env_consts: WalkerConsts
    env_seed: int
    latent_dim: int
    history: list = field(default_factory=list)

    def latents(self) -> np.ndarray | None:
        if self.encoder is None:
            return None
        return self.encoder.encode(self.param_matrix)

    def rebuild_env_set(self) -> EnvSet:
        return EnvSet(self.param_matrix, self.env_consts, self.env_seed)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {}
        save_checkpoint(out / "policy.json", self.policy.to_tensors(), self.policy.meta())
        files["policy.json"] = True
        save_checkpoint(out / "critic.json", self.critic.to_tensors(), self.critic.meta())
        files["critic.json"] = True
        if self.encoder is not None:
            tensors = dict(self.encoder.net.params())
            tensors["input_center"] = self.encoder.input_center
            tensors["input_scale"] = self.encoder.input_scale
            save_checkpoint(
                out / "encoder.json",
                tensors,
                {"kind": "encoder", "param_dim": self.encoder.param_dim,
                 "latent_dim": self.encoder.latent_dim,
                 "layer_sizes": list(self.encoder.net.layer_sizes)},
            )
            files["encoder.json"] = True
            save_checkpoint(out / "latents.json", {"z": self.latents()}, {"kind": "latents"})
            files["latents.json"] = True
        save_checkpoint(out / "env_params.json", {"mu": self.param_matrix}, {"kind": "env_params"})
        files["env_params.json"] = True
        meta = {
            "env_seed": self.env_seed,
            "latent_dim": self.latent_dim,
            "env_consts": self.env_consts.to_dict(),
            "policy_hash": params_hash(self.policy),
            "critic_hash": params_hash(self.critic),
        }
        (out / "stage1.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
        files["stage1.json"] = True
        _write_manifest(out, files)

    @classmethod
    def load(cls, out_dir, verify: bool = True) -> "StageOneArtifacts":
        out = Path(out_dir)
        if verify:
            _verify_manifest(out)
        meta = json.loads((out / "stage1.json").read_text())
        tensors, pmeta = load_checkpoint(out / "policy.json")
        policy = FilmPolicy.from_tensors(tensors, pmeta)
        tensors, cmeta = load_checkpoint(out / "critic.json")
        critic = Critic.from_tensors(tensors, cmeta)
        encoder = None
        if (out / "encoder.json").exists():
            tensors, emeta = load_checkpoint(out / "encoder.json")
            hidden = tuple(emeta["layer_sizes"][1:-1])
            encoder = DynamicsEncoder(
                emeta["param_dim"], emeta["latent_dim"], hidden=hidden,
                input_center=tensors.get("input_center"),
                input_scale=tensors.get("input_scale"),
            )
            for name, value in encoder.net.params().items():
                value[...] = tensors[name]
        mu, _ = load_checkpoint(out / "env_params.json")
        consts_dict = dict(meta["env_consts"])
        return cls(
            policy=policy,
            encoder=encoder,
            critic=critic,
            param_matrix=mu["mu"],
            env_consts=WalkerConsts(**consts_dict),
            env_seed=meta["env_seed"],
            latent_dim=meta["latent_dim"],
        )


@dataclass
class UniversalLatent:
    vector: np.ndarray
    z_bar: np.ndarray  # the mean-latent starting point, kept for provenance
    trace: list = field(default_factory=list)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "universal.json", {"z": self.vector, "z_bar": self.z_bar},
                        {"kind": "universal_latent"})
        (out / "trace.json").write_text(json.dumps(self.trace, sort_keys=True))
        _write_manifest(out, {"universal.json": True, "trace.json": True})

    @classmethod
    def load(cls, out_dir, verify: bool = True) -> "UniversalLatent":
        out = Path(out_dir)
        if verify:
            _verify_manifest(out)
        tensors, _ = load_checkpoint(out / "universal.json")
        trace = json.loads((out / "trace.json").read_text())
        return cls(vector=tensors["z"], z_bar=tensors["z_bar"], trace=trace)


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------

def stage1_train(
    env_set: EnvSet,
    cfg: PpoConfig,
    total_steps: int,
    latent_dim: int = 16,
    seed: int = 0,
    conditioning: str = "film",
    log=None,
    actor_hidden=(64, 64),
    critic_hidden=(64, 64, 64),
    encoder_hidden=(32,),
) -> StageOneArtifacts:
    """Joint PPO over the randomized set; conditioning picks the actor.

    "film": latent modulates every hidden layer (encoder trained too).
    "none": plain unconditioned policy, the pi(s) baseline.
    """
    env = env_set.env
    rng = np.random.default_rng(seed + 100)
    if conditioning == "film":
        center, scale = param_normalization()
        encoder = DynamicsEncoder(env_set.param_matrix.shape[1], latent_dim,
                                  hidden=encoder_hidden, rng=np.random.default_rng(seed + 1),
                                  input_center=center, input_scale=scale)
        policy = FilmPolicy(env.obs_dim, env.act_dim, latent_dim, hidden=actor_hidden,
                            rng=np.random.default_rng(seed + 2), log_std_init=cfg.log_std_init)
        source = EncoderLatents(encoder, env_set.param_matrix)
        mask = frozenset({"actor", "film", "encoder", "critic"})
    elif conditioning == "none":
        encoder = None
        policy = FilmPolicy(env.obs_dim, env.act_dim, 0, hidden=actor_hidden,
                            rng=np.random.default_rng(seed + 2), log_std_init=cfg.log_std_init)
        source = NoLatent()
        mask = frozenset({"actor", "critic"})
    else:
        raise ConfigurationError(f"unknown conditioning {conditioning!r}")

    critic = Critic(env.priv_dim, hidden=critic_hidden, rng=np.random.default_rng(seed + 3))
    learner = PpoLearner(policy, critic, cfg, mask, source)
    task = make_walker_task(env)
    history = []
    n_updates = max(1, total_steps // cfg.batch_size)
    for u in range(n_updates):
        batch = collect_rollout(policy, critic, task, source, cfg.batch_size, rng)
        gae(batch, cfg.gamma, cfg.lam)
        stats = learner.ppo_update(batch)
        stats["update"] = u
        stats["env_steps"] = (u + 1) * cfg.batch_size
        history.append(stats)
        if log is not None:
            log(stats)
    return StageOneArtifacts(
        policy=policy,
        encoder=encoder,
        critic=critic,
        param_matrix=env_set.param_matrix,
        env_consts=env_set.consts,
        env_seed=env_set.seed,
        latent_dim=latent_dim if conditioning == "film" else 0,
        history=history,
    )


def latent_utilization_gap(artifacts: StageOneArtifacts, eval_steps: int = 600, seed: int = 0):
    """(reward with true per-env latents, reward with all-zero latents).

    Both evaluations rebuild the same env set and run deterministically,
    so an identity-film policy scores exactly equal under both.
    """
    if artifacts.encoder is None:
        raise ConfigurationError("gap needs a latent-conditioned policy")
    results = []
    for src in (
        EncoderLatents(artifacts.encoder, artifacts.param_matrix),
        ZeroLatent(artifacts.latent_dim),
    ):
        env_set = artifacts.rebuild_env_set()
        task = make_walker_task(env_set.env)
        r = evaluate_policy(artifacts.policy, task, src, eval_steps, np.random.default_rng(seed))
        results.append(r["mean_step_reward"])
    return results[0], results[1]


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------

def stage2_universal(
    artifacts: StageOneArtifacts,
    cfg: PpoConfig,
    total_steps: int,
    seed: int = 0,
    log=None,
) -> UniversalLatent:
    """Optimize one shared latent across the training set, from the mean."""
    if artifacts.encoder is None:
        raise ConfigurationError("universal latent needs stage-1 film artifacts")
    z_bar = artifacts.latents().mean(axis=0)
    latent = FixedLatent(z_bar.copy())
    env_set = artifacts.rebuild_env_set()
    task = make_walker_task(env_set.env)
    learner = PpoLearner(
        artifacts.policy, artifacts.critic, cfg, frozenset({"latent"}), latent
    )
    rng = np.random.default_rng(seed + 200)
    trace = []
    n_updates = max(1, total_steps // cfg.batch_size)
    for u in range(n_updates):
        batch = collect_rollout(artifacts.policy, artifacts.critic, task, latent, cfg.batch_size, rng)
        gae(batch, cfg.gamma, cfg.lam)
        stats = learner.ppo_update(batch)
        row = {
            "update": u,
            "mean_step_reward": stats["mean_step_reward"],
            "latent_norm": stats["latent_norm"],
        }
        trace.append(row)
        if log is not None:
            log(stats)
    return UniversalLatent(vector=latent.vector, z_bar=z_bar, trace=trace)


# ---------------------------------------------------------------------------
# stage 3 and the fine-tuning variant family
# ---------------------------------------------------------------------------

class ResidualPolicy:
    """Frozen base policy plus a trainable copy with a zeroed last layer.

    Actions are the sum of both means (before the env clamps them), so at
    initialization the behavior is exactly the base policy's.
    """

    def __init__(self, base: FilmPolicy):
        if base.films is not None:
            raise ConfigurationError("residual baseline builds on the no-latent policy")
        self.base = base
        self.res = base.copy()
        self.res.net.weights[-1][...] = 0.0
        self.res.net.biases[-1][...] = 0.0
        self.obs_dim = base.obs_dim
        self.act_dim = base.act_dim
        self.latent_dim = 0
        self.films = None
        self.log_std = base.log_std.copy()

    def mean(self, obs, z=None, tape=None):
        return self.base.mean(obs) + self.res.mean(obs, tape=tape)

    def sample(self, obs, z, rng):
        from .rl.policies import gaussian_log_prob

        mean = self.mean(obs, z)
        std = np.exp(self.log_std)
        actions = mean + std * rng.standard_normal(mean.shape)
        return actions, gaussian_log_prob(actions, mean, self.log_std)

    def params(self) -> dict:
        out = self.res.net.params()
        out["log_std"] = self.log_std
        return out

    def group_of(self, name: str) -> str:
        return "actor"

    def backward(self, tape, dmean):
        from .nn import backward as nn_backward

        return nn_backward(tape, dmean)


@dataclass
class RigVariant:
    """One cell of the rig ablation grid."""

    name: str
    finetune: str = "latent"  # latent | actor | residual | none
    latent_init: str | None = "universal"  # universal | zero | None (no latent)
    arm_xy: str = "compliant"  # compliant | fixed
    arm_z: str = "schedule"  # schedule | high | low


def _apply_arm_z(task: WalkerTask, variant: RigVariant):
    if variant.arm_z == "schedule":
        task.schedule_active = True
    else:
        task.schedule_active = False
        offset = 0.0 if variant.arm_z == "high" else -task.schedule_cfg.z_drop_total
        task.ts.pos[:, 2] = task.ts.anchor[:, 2] + offset
        task._z_hold = offset


def rig_finetune(
    policy_base,
    pseudo_env_factory,
    variant: RigVariant,
    cfg: PpoConfig,
    total_steps: int,
    seed: int = 0,
    schedule_cfg: teach.ScheduleConfig | None = None,
    latent_vector: np.ndarray | None = None,
    eval_every: int = 5,
    eval_steps: int = 400,
    log=None,
    fail_fraction_abort: float = 0.9,
):
    """Run one fine-tuning variant on the held-out rig.

    Training alternates with deterministic evaluation phases (every
    ``eval_every`` batches) run on a freshly rebuilt rig with the arm at
    the full-descent height and compliance on, which is the shared test
    condition for every variant.  Returns a result dict with both curves
    and the final artifacts.
    """
    schedule_cfg = schedule_cfg or teach.ScheduleConfig()
    env = pseudo_env_factory()
    ts = teach.make_teacher(
        env.n, env.nominal_arm_anchor(),
        mode=teach.MODE_COMPLIANT if variant.arm_xy == "compliant" else teach.MODE_FIXED,
    )
    task = WalkerTask(env, ts, schedule_cfg=schedule_cfg, reward_source="belt")
    _apply_arm_z(task, variant)

    # trainable selection
    if variant.finetune == "latent":
        policy = policy_base
        if latent_vector is None:
            raise ConfigurationError("latent fine-tuning needs an initial latent")
        source = FixedLatent(latent_vector.copy())
        mask = frozenset({"latent", "critic"})
    elif variant.finetune == "actor":
        policy = policy_base
        source = (
            FixedLatent(latent_vector.copy())
            if latent_vector is not None
            else NoLatent()
        )
        mask = frozenset({"actor", "critic"})
    elif variant.finetune == "residual":
        policy = ResidualPolicy(policy_base)
        source = NoLatent()
        mask = frozenset({"actor", "critic"})
    elif variant.finetune == "none":
        policy = policy_base
        if latent_vector is not None:
            source = FixedLatent(latent_vector.copy())
        elif getattr(policy_base, "films", None) is not None:
            source = ZeroLatent(policy_base.latent_dim)
        else:
            source = NoLatent()
        mask = frozenset({"critic"})
    else:
        raise ConfigurationError(f"unknown finetune target {variant.finetune!r}")

    critic = Critic(env.priv_dim, hidden=(64, 64, 64), rng=np.random.default_rng(seed + 7))
    learner = PpoLearner(policy, critic, cfg, mask, source)
    rng = np.random.default_rng(seed + 300)

    train_curve = []
    eval_curve = []
    consecutive_bad = 0
    n_updates = max(1, total_steps // cfg.batch_size)
    for u in range(n_updates):
        if variant.arm_z != "schedule":
            task.ts.pos[:, 2] = task.ts.anchor[:, 2] + task._z_hold
        batch = collect_rollout(policy, critic, task, source, cfg.batch_size, rng)
        gae(batch, cfg.gamma, cfg.lam)
        stats = learner.ppo_update(batch)
        train_curve.append(
            {"update": u, "env_steps": (u + 1) * cfg.batch_size,
             "mean_step_reward": stats["mean_step_reward"],
             "failures": stats["episode_failures"]}
        )
        if log is not None:
            log({"phase": "train", **train_curve[-1]})

        n_eps = len(batch.episode_returns)
        if n_eps >= 2 and stats["episode_failures"] >= fail_fraction_abort * n_eps:
            consecutive_bad += 1
            if consecutive_bad >= 5:
                raise CurriculumFault(
                    f"{variant.name}: >{fail_fraction_abort:.0%} of episodes failed "
                    f"for 5 consecutive batches (update {u})"
                )
        else:
            consecutive_bad = 0

        if (u + 1) % eval_every == 0 or u == n_updates - 1:
            ev = _rig_eval(policy, source, pseudo_env_factory, schedule_cfg, eval_steps, seed)
            eval_curve.append({"update": u, "env_steps": (u + 1) * cfg.batch_size, **ev})
            if log is not None:
                log({"phase": "eval", **eval_curve[-1]})

    return {
        "variant": variant,
        "policy": policy,
        "critic": critic,
        "latent": source.vector if isinstance(source, FixedLatent) else None,
        "train_curve": train_curve,
        "eval_curve": eval_curve,
        "final_eval": eval_curve[-1]["mean_step_reward"] if eval_curve else float("nan"),
    }


def _rig_eval(policy, source, pseudo_env_factory, schedule_cfg, eval_steps, seed):
    """Shared test condition: arm fully lowered, XY compliance on."""
    env = pseudo_env_factory()
    ts = teach.make_teacher(env.n, env.nominal_arm_anchor(), mode=teach.MODE_COMPLIANT)
    ts.pos[:, 2] = ts.anchor[:, 2] - schedule_cfg.z_drop_total
    task = WalkerTask(env, ts, schedule_cfg=schedule_cfg, reward_source="belt", schedule_active=False)
    r = evaluate_policy(policy, task, source, eval_steps, np.random.default_rng(seed + 900))
    return {"mean_step_reward": r["mean_step_reward"], "failures": r["failures"]}


def stage3_finetune(
    artifacts: StageOneArtifacts,
    universal: UniversalLatent,
    pseudo_env_factory,
    cfg: PpoConfig,
    total_steps: int,
    seed: int = 0,
    schedule_cfg: teach.ScheduleConfig | None = None,
    log=None,
):
    """The headline rig adaptation: freeze actor+films, tune latent + new critic."""
    variant = RigVariant(name="finetune_latent", finetune="latent",
                         latent_init="universal", arm_xy="compliant", arm_z="schedule")
    return rig_finetune(
        artifacts.policy, pseudo_env_factory, variant, cfg, total_steps,
        seed=seed, schedule_cfg=schedule_cfg, latent_vector=universal.vector, log=log,
    )


def residual_baseline(
    base_policy: FilmPolicy,
    pseudo_env_factory,
    cfg: PpoConfig,
    total_steps: int,
    seed: int = 0,
    schedule_cfg: teach.ScheduleConfig | None = None,
    log=None,
):
    """Frozen pi(s) plus trainable zero-initialized residual head."""
    variant = RigVariant(name="finetune_residual", finetune="residual",
                         latent_init=None, arm_xy="compliant", arm_z="schedule")
    return rig_finetune(
        base_policy, pseudo_env_factory, variant, cfg, total_steps,
        seed=seed, schedule_cfg=schedule_cfg, log=log,
    )
