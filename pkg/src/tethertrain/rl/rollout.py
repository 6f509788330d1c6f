"""Rollout collection: the env-teacher-policy loop that fills batches.

A task object owns the env, its teacher bank, reward wiring and failure
thresholds; the collector is task-agnostic.  Failures trigger automatic
resets inline (the arm lifts the robot back to the schedule height), and
every failure step is emitted as a terminal transition.
"""

from __future__ import annotations

import numpy as np

from .. import teacher as teach
from ..errors import EnvironmentFault
from ..rewards import SwingRewardConfig, force_spectrum, swing_reward
from .types import RolloutBatch


class WalkerTask:
    """Treadmill walking: reward tracks the commanded speed.

    ``reward_source`` picks the speed estimate: "true" uses the simulator
    ground truth (available in pretraining only), "belt" uses the
    treadmill speed, which is what the physical rig can measure.
    """

    def __init__(
        self,
        env,
        ts: teach.TeacherState,
        schedule_cfg: teach.ScheduleConfig | None = None,
        thresholds: teach.FailureThresholds | None = None,
        reward_source: str = "true",
        sigma: float = 100.0,
        schedule_active: bool = False,
        telemetry=None,
    ):
        self.env = env
        self.ts = ts
        self.schedule_cfg = schedule_cfg or teach.ScheduleConfig()
        self.thresholds = thresholds or teach.FailureThresholds()
        self.reward_source = reward_source
        self.sigma = sigma
        self.schedule_active = schedule_active
        self.telemetry = telemetry
        self.obs = env.student_obs()
        self.priv = env.privileged_obs()
        self._ep_acc = np.zeros(env.n)

    def pre_step(self, step_in_batch: int):
        if self.schedule_active:
            offset = teach.height_schedule(self.ts.schedule_step, self.schedule_cfg)
            self.ts.pos[:, 2] = self.ts.anchor[:, 2] + offset

    def step(self, actions):
        obs, priv, info = self.env.step(actions, self.ts)
        if self.reward_source == "true":
            v = info["loco_speed_smooth"]
        else:
            v = info["belt_speed"]
        reward = np.exp(-self.sigma * (v - info["command"]) ** 2)
        failed = teach.detect_failure(info["pitch"], info["force"], self.thresholds)
        done = failed | info["horizon_done"]
        if self.telemetry is not None:
            self.telemetry.append(self.ts, failed)
        return obs, priv, reward, done, failed, info

    def reset_done(self, done_mask):
        mask = np.asarray(done_mask, dtype=bool)
        if not mask.any():
            return
        if self.schedule_active:
            fresh = teach.auto_reset(self.env, self.ts, mask, self.schedule_cfg)
        else:
            fresh = self.env.reset_envs(mask)
            self.ts.pos[mask] = self.ts.anchor[mask]
            self.ts.vel[mask] = 0.0
        idx = np.flatnonzero(mask)
        self.obs[idx] = fresh
        self.priv[idx] = self.env.privileged_obs()[idx]


class SwingTask:
    """Suspended swing-up: reward follows the dominant force amplitude.

    The arm runs one of the schedule modes per step (from a bin schedule
    laid over the batch); helping/perturbing strokes are phase-locked to
    the tracked swing via the provided phase tracker.
    """

    def __init__(
        self,
        env,
        ts: teach.TeacherState,
        reward_cfg: SwingRewardConfig | None = None,
        thresholds: teach.FailureThresholds | None = None,
        arm_amplitude: float = 0.05,
        mode_sequence=None,
        phase_tracker=None,
        sample_rate: float = 50.0,
        telemetry=None,
    ):
        self.env = env
        self.ts = ts
        self.reward_cfg = reward_cfg or SwingRewardConfig()
        self.thresholds = thresholds or teach.FailureThresholds(pitch_max=np.pi, force_max=60.0)
        self.arm_amplitude = arm_amplitude
        self.mode_sequence = mode_sequence
        self.phase_tracker = phase_tracker
        self.sample_rate = sample_rate
        self.telemetry = telemetry
        self.obs = env.student_obs()
        self.priv = env.privileged_obs()
        self._arm_target = None
        self._ep_acc = np.zeros(env.n)

    def set_mode_sequence(self, seq):
        self.mode_sequence = seq

    def pre_step(self, step_in_batch: int):
        mode = teach.MODE_FIXED
        if self.mode_sequence is not None and step_in_batch < len(self.mode_sequence):
            mode = int(self.mode_sequence[step_in_batch])
        self.ts.mode[:] = mode
        if mode in (teach.MODE_HELPING, teach.MODE_PERTURBING) and self.phase_tracker is not None:
            targets = np.empty(self.env.n)
            for i in range(self.env.n):
                est = self.phase_tracker(self.env.force_hist[i], self.sample_rate)
                if est is None:
                    targets[i] = self.ts.anchor[i, 0]
                else:
                    targets[i] = teach.swing_arm_target(
                        mode, est, self.ts.anchor[i, 0], self.arm_amplitude
                    )
            self._arm_target = targets
        else:
            self._arm_target = None

    def step(self, actions):
        obs, priv, info = self.env.step(actions, self.ts, arm_target_x=self._arm_target)
        reward = np.empty(self.env.n)
        for i in range(self.env.n):
            spec = force_spectrum(self.env.force_hist[i], self.sample_rate)
            reward[i] = swing_reward(spec, self.reward_cfg)
        failed = teach.detect_failure(info["pitch"], info["force"], self.thresholds)
        done = failed | info["horizon_done"]
        if self.telemetry is not None:
            self.telemetry.append(self.ts, failed)
        return obs, priv, reward, done, failed, info

    def reset_done(self, done_mask):
        mask = np.asarray(done_mask, dtype=bool)
        if not mask.any():
            return
        fresh = self.env.reset_envs(mask)
        idx = np.flatnonzero(mask)
        self.obs[idx] = fresh
        self.priv[idx] = self.env.privileged_obs()[idx]
        self.ts.pos[idx, 0] = self.ts.anchor[idx, 0]
        self.ts.vel[idx] = 0.0
        self.env.arm_x[idx] = self.ts.anchor[idx, 0]
        self.env.arm_vx[idx] = 0.0


def collect_rollout(policy, critic, task, latent_source, batch_size: int, rng, deterministic=False):
    """Collect exactly ``batch_size`` transitions across the task's envs.

    The teacher schedule counter advances once per env step.  An env
    fault (non-finite state) aborts the batch with the env index.
    """
    env = task.env
    n = env.n
    if batch_size % n:
        raise ValueError(f"batch_size {batch_size} not divisible by {n} envs")
    horizon = batch_size // n
    obs_buf = np.empty((horizon, n, env.obs_dim))
    priv_buf = np.empty((horizon, n, env.priv_dim))
    act_buf = np.empty((horizon, n, env.act_dim))
    logp_buf = np.empty((horizon, n))
    rew_buf = np.empty((horizon, n))
    val_buf = np.empty((horizon, n))
    done_buf = np.zeros((horizon, n), dtype=bool)
    env_idx = np.tile(np.arange(n), (horizon, 1))
    ep_returns = []
    failures = 0
    all_idx = np.arange(n)
    for t in range(horizon):
        obs = task.obs
        priv = task.priv
        z = latent_source.per_env(all_idx)
        if deterministic:
            actions = policy.mean(obs, z)
            logp = np.zeros(n)
        else:
            actions, logp = policy.sample(obs, z, rng)
        task.pre_step(t)
        obs_buf[t] = obs
        priv_buf[t] = priv
        act_buf[t] = actions
        logp_buf[t] = logp
        val_buf[t] = critic.value(priv)
        new_obs, new_priv, reward, done, failed, info = task.step(actions)
        if hasattr(latent_source, "observe"):
            latent_source.observe(obs, actions, done)
        if info["fault"].any():
            bad = int(np.flatnonzero(info["fault"])[0])
            raise EnvironmentFault(f"non-finite state in env {bad}")
        rew_buf[t] = reward
        done_buf[t] = done
        task._ep_acc += reward
        if done.any():
            for i in np.flatnonzero(done):
                ep_returns.append(float(task._ep_acc[i]))
                task._ep_acc[i] = 0.0
            failures += int(failed.sum())
        task.obs = new_obs
        task.priv = new_priv
        task.reset_done(done)

    z = latent_source.per_env(all_idx)
    bootstrap = critic.value(task.priv)
    batch = RolloutBatch(
        obs=obs_buf,
        priv=priv_buf,
        actions=act_buf,
        log_probs=logp_buf,
        rewards=rew_buf,
        values=val_buf,
        dones=done_buf,
        env_index=env_idx,
        bootstrap_value=bootstrap,
        episode_returns=ep_returns,
        episode_failures=failures,
    )
    return batch
