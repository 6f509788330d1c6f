"""From-scratch swing-up training with teacher schedules.

Three stages: (1) PPO from scratch under a fixed arm while logging every
transition into an offline dataset; (2) critic pretraining on that
dataset; (3) a fresh actor joined with the pretrained critic, trained
under one of the arm schedules (fixed / helping / perturbing), where the
active modes run only through the middle phase of the budget and follow
the batch bin layout inside it.

The phase tracker recovers the swing phase from the force ring buffer:
take the dominant tone of the spectrum, demodulate the last two periods
against quadrature carriers, and read the phase at the window's end.  A
window with no periodic content reports no lock and the arm falls back
to holding position.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import teacher as teach
from .envs import SwingConsts, SwingEnv
from .errors import ConfigurationError
from .rewards import SwingRewardConfig, force_spectrum
from .rl import (
    Critic,
    FilmPolicy,
    NoLatent,
    PpoConfig,
    SwingTask,
    batch_to_transitions,
    collect_rollout,
    gae,
    params_hash,
    pretrain_critic_offline,
    save_transitions,
    OfflineConfig,
    PpoLearner,
)

__all__ = [
    "SwingRunConfig",
    "swing_phase_tracker",
    "swing_ppo_config",
    "swing_stage1",
    "swing_stage3",
    "measure_arm_power",
    "true_swing_phase",
]


def swing_ppo_config(**overrides) -> PpoConfig:
    """Swing-task PPO recipe: hot actor, cold critic, wide exploration."""
    base = dict(
        batch_size=1024,
        epochs=20,
        clip=0.2,
        entropy_coef=0.04,
        actor_lr=2e-3,
        critic_lr=2e-5,
        log_std_init=-0.7,
    )
    base.update(overrides)
    return PpoConfig(**base)


@dataclass
class SwingRunConfig:
    stage: int = 1
    teacher_mode: int = teach.MODE_FIXED
    total_steps: int = 50_000
    dataset_size: int = 50_000
    dataset_path: str | None = None
    active_window: tuple = (1.0 / 3.0, 2.0 / 3.0)  # budget fraction with live arm
    arm_amplitude: float = 0.05
    episode_seconds: float = 20.0
    use_pretrained_critic: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ConfigurationError("stage must be 1, 2 or 3")


def true_swing_phase(theta: float, theta_dot: float, omega: float) -> float:
    """Ground-truth phase convention: theta = A * sin(phase)."""
    return float(np.mod(np.arctan2(theta, theta_dot / omega), 2 * np.pi))


def swing_phase_tracker(force_hist: np.ndarray, sample_rate: float):
    """Estimate the swing phase from the recent force window.

    Returns the phase in [0, 2pi) or None when the window carries no
    periodic signal (no lock).  The horizontal pivot force of a swing
    follows the swing angle, so the force phase is the swing phase.
    """
    spec = force_spectrum(force_hist, sample_rate)
    if spec.degenerate or spec.dominant_frequency <= 0.0 or spec.dominant_amplitude < 1e-6:
        return None
    nu = spec.dominant_frequency
    n = len(force_hist)
    period = sample_rate / nu
    k = int(min(n, max(period * 2.0, 8)))
    seg = np.asarray(force_hist[-k:], dtype=float)
    seg = seg - seg.mean()
    # time runs up to the newest sample at t_end = (n-1)/fs
    t = (np.arange(n - k, n)) / sample_rate
    s_carrier = np.sin(2 * np.pi * nu * t)
    c_carrier = np.cos(2 * np.pi * nu * t)
    a = 2.0 * np.mean(seg * s_carrier)
    b = 2.0 * np.mean(seg * c_carrier)
    if a * a + b * b < 1e-12:
        return None
    psi = np.arctan2(b, a)  # force ~ C sin(2 pi nu t + psi)
    phase_end = 2 * np.pi * nu * t[-1] + psi
    return float(np.mod(phase_end, 2 * np.pi))


def _make_task(env, mode=teach.MODE_FIXED, arm_amplitude=0.05, telemetry=None):
    ts = teach.make_teacher(env.n, [0.0, 0.0, 0.0], mode=mode)
    return SwingTask(
        env,
        ts,
        reward_cfg=SwingRewardConfig(),
        arm_amplitude=arm_amplitude,
        phase_tracker=swing_phase_tracker,
        telemetry=telemetry,
    )


def swing_stage1(
    env: SwingEnv,
    cfg: PpoConfig | None = None,
    run_cfg: SwingRunConfig | None = None,
    seed: int = 0,
    log=None,
):
    """Train actor+critic from scratch with a fixed arm; log the dataset.

    Every collected transition lands in the returned dataset (suboptimal
    early experience included, which is the point).
    """
    cfg = cfg or swing_ppo_config()
    run_cfg = run_cfg or SwingRunConfig(stage=1)
    task = _make_task(env)
    rng = np.random.default_rng(seed + 400)
    policy = FilmPolicy(env.obs_dim, env.act_dim, 0, hidden=(64, 64),
                        rng=np.random.default_rng(seed + 401), log_std_init=cfg.log_std_init)
    critic = Critic(env.priv_dim, hidden=(64, 64, 64), rng=np.random.default_rng(seed + 402))
    learner = PpoLearner(policy, critic, cfg, frozenset({"actor", "critic"}), NoLatent())
    dataset = []
    history = []
    n_updates = max(1, run_cfg.dataset_size // cfg.batch_size)
    for u in range(n_updates):
        batch = collect_rollout(policy, critic, task, NoLatent(), cfg.batch_size, rng)
        gae(batch, cfg.gamma, cfg.lam)
        dataset.extend(batch_to_transitions(batch))
        stats = learner.ppo_update(batch)
        stats["update"] = u
        history.append(stats)
        if log is not None:
            log(stats)
    dataset = dataset[: run_cfg.dataset_size]
    if run_cfg.dataset_path:
        save_transitions(run_cfg.dataset_path, dataset)
    return {"policy": policy, "critic": critic, "dataset": dataset, "history": history}


def swing_stage3(
    env: SwingEnv,
    pretrained_critic: Critic | None,
    cfg: PpoConfig | None = None,
    run_cfg: SwingRunConfig | None = None,
    seed: int = 0,
    log=None,
    telemetry=None,
):
    """Fresh actor + (optionally pretrained) critic under an arm schedule.

    The helping/perturbing modes are active only inside the configured
    middle window of the budget; within an active batch the bin layout
    assigns which steps get the stroke.  Returns the reward trace and
    parameter hashes for provenance checks.
    """
    cfg = cfg or swing_ppo_config()
    run_cfg = run_cfg or SwingRunConfig(stage=3, total_steps=50_000)
    task = _make_task(env, arm_amplitude=run_cfg.arm_amplitude, telemetry=telemetry)
    rng = np.random.default_rng(seed + 500)
    sched_rng = np.random.default_rng(seed + 501)
    policy = FilmPolicy(env.obs_dim, env.act_dim, 0, hidden=(64, 64),
                        rng=np.random.default_rng(seed + 502), log_std_init=cfg.log_std_init)
    if pretrained_critic is not None:
        critic = pretrained_critic.copy()
        critic_hash_at_load = params_hash(pretrained_critic)
    else:
        critic = Critic(env.priv_dim, hidden=(64, 64, 64), rng=np.random.default_rng(seed + 503))
        critic_hash_at_load = None
    learner = PpoLearner(policy, critic, cfg, frozenset({"actor", "critic"}), NoLatent())
    schedule_cfg = teach.ScheduleConfig()
    n_updates = max(1, run_cfg.total_steps // cfg.batch_size)
    lo = run_cfg.active_window[0] * n_updates
    hi = run_cfg.active_window[1] * n_updates
    history = []
    for u in range(n_updates):
        horizon = cfg.batch_size // env.n
        if run_cfg.teacher_mode != teach.MODE_FIXED and lo <= u < hi:
            seq = teach.bin_schedule(horizon, run_cfg.teacher_mode, schedule_cfg, sched_rng)
        else:
            seq = np.full(horizon, teach.MODE_FIXED, dtype=np.int8)
        task.set_mode_sequence(seq)
        batch = collect_rollout(policy, critic, task, NoLatent(), cfg.batch_size, rng)
        gae(batch, cfg.gamma, cfg.lam)
        stats = learner.ppo_update(batch)
        stats["update"] = u
        stats["env_steps"] = (u + 1) * cfg.batch_size
        stats["arm_active"] = bool(lo <= u < hi and run_cfg.teacher_mode != teach.MODE_FIXED)
        history.append(stats)
        if log is not None:
            log(stats)
    return {
        "policy": policy,
        "critic": critic,
        "history": history,
        "actor_hash": params_hash(policy),
        "critic_hash_at_load": critic_hash_at_load,
        "final_reward": float(np.mean([h["mean_step_reward"] for h in history[-5:]])),
    }


def measure_arm_power(
    mode: int,
    steps: int = 1500,
    seed: int = 0,
    init_angle: float = 0.45,
    consts: SwingConsts | None = None,
):
    """Mean power the arm injects into a steady swing under one mode.

    Power = force-on-pendulum-x times pivot velocity; helping should
    yield positive mean power, perturbing negative.  A warmup lets the
    tracker lock before measurement starts.
    """
    consts = consts or SwingConsts(init_angle=init_angle, pose_noise=0.0)
    env = SwingEnv(consts=consts, seed=seed)
    task = _make_task(env, mode=mode)
    task.ts.mode[:] = teach.MODE_FIXED
    warmup = 200
    powers = []
    for k in range(steps):
        if k == warmup:
            task.ts.mode[:] = mode
        seq = np.full(1, task.ts.mode[0], dtype=np.int8)
        task.set_mode_sequence(seq)
        task.pre_step(0)
        _, _, reward, done, failed, info = task.step(np.zeros((1, 3)))
        if k >= warmup:
            force_on_pend = -info["force"][0, 0]
            powers.append(force_on_pend * info["arm_vx"][0])
    return float(np.mean(powers))
