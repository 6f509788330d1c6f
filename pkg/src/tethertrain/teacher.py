"""Simulated teacher-side behaviors: the compliant arm, the arm height
curriculum, the treadmill speed loop, swing help/perturb targeting, bin
scheduling, failure detection and automatic resets.

All numeric ops broadcast over leading axes, so the same code drives a
single teacher (scalars / shape-(3,) arrays) or a bank of N teachers
(shape (N,) / (N, 3) arrays) paired with a vectorized environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

MODE_FIXED = 0
MODE_COMPLIANT = 1
MODE_HELPING = 2
MODE_PERTURBING = 3
MODE_NAMES = ("fixed", "compliant", "helping", "perturbing")

TREADMILL_V_BASE = 0.1  # m/s
TREADMILL_KP_FORCE = 0.2  # (m/s)/N
TREADMILL_KP_PITCH = -5.0  # (m/s)/rad
TREADMILL_V_MAX = 0.24  # m/s

FORCE_CLAMP = 50.0  # N, defensive clamp on measured forces

__all__ = [
    "MODE_FIXED",
    "MODE_COMPLIANT",
    "MODE_HELPING",
    "MODE_PERTURBING",
    "MODE_NAMES",
    "TeacherState",
    "AdmittanceGains",
    "ScheduleConfig",
    "FailureThresholds",
    "make_teacher",
    "admittance_step",
    "height_schedule",
    "treadmill_pd",
    "swing_arm_target",
    "bin_schedule",
    "detect_failure",
    "auto_reset",
]


@dataclass
class AdmittanceGains:
    """Virtual mass-spring-damper rendered along the compliant XY axes."""

    stiffness: tuple = (100.0, 50.0)  # N/m
    damping: tuple = (0.5, 0.5)  # N s/m
    inertia: tuple = (0.03, 0.03)  # kg

    def __post_init__(self):
        if min(*self.stiffness, *self.damping, *self.inertia) <= 0:
            raise ConfigurationError("admittance gains must all be positive")


@dataclass
class ScheduleConfig:
    """Arm-height curriculum and batch bin layout."""

    z_drop_total: float = 0.02  # m, total linear descent
    z_drop_steps: int = 50_000  # env steps to reach full descent
    bins_per_batch: int = 5
    helping_bins: int = 3  # drawn from the last 4 bins
    perturbing_bins: int = 1  # drawn from the first 4 bins
    arm_amplitude: float = 0.05  # m, swing help/perturb stroke


@dataclass
class FailureThresholds:
    pitch_max: float = 0.5  # rad
    force_max: float = 10.0  # N, applies to |F_x| and |F_y|


@dataclass
class TeacherState:
    """Arm pose, sensed wrench, belt speed and curriculum counters.

    Arrays carry a leading env axis of size N (N = 1 for a single rig).
    """

    pos: np.ndarray  # (N, 3) arm end-effector position, m
    vel: np.ndarray  # (N, 3) arm velocity, m/s
    anchor: np.ndarray  # (N, 3) compliant-axis anchor / schedule origin
    force: np.ndarray  # (N, 3) measured tether force, N
    torque: np.ndarray  # (N, 3) measured tether torque, N m
    belt_speed: np.ndarray  # (N,) treadmill speed, m/s
    schedule_step: np.ndarray  # (N,) env steps seen by the curriculum
    mode: np.ndarray  # (N,) MODE_* codes

    @property
    def n(self) -> int:
        return self.pos.shape[0]


def make_teacher(n: int, anchor_xyz, mode: int = MODE_COMPLIANT) -> TeacherState:
    anchor = np.tile(np.asarray(anchor_xyz, dtype=float), (n, 1))
    return TeacherState(
        pos=anchor.copy(),
        vel=np.zeros((n, 3)),
        anchor=anchor,
        force=np.zeros((n, 3)),
        torque=np.zeros((n, 3)),
        belt_speed=np.full(n, TREADMILL_V_BASE),
        schedule_step=np.zeros(n, dtype=np.int64),
        mode=np.full(n, mode, dtype=np.int8),
    )


def admittance_step(ts: TeacherState, gains: AdmittanceGains, measured_force_xy, dt: float) -> TeacherState:
    """One semi-implicit Euler step of the XY admittance law.

    inertia * xdd + damping * xd + stiffness * (x - anchor) = F, per axis.
    Z is never touched here; the height schedule owns it.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    f = np.clip(np.asarray(measured_force_xy, dtype=float), -FORCE_CLAMP, FORCE_CLAMP)
    k = np.asarray(gains.stiffness)
    c = np.asarray(gains.damping)
    m = np.asarray(gains.inertia)
    acc = (f - c * ts.vel[..., :2] - k * (ts.pos[..., :2] - ts.anchor[..., :2])) / m
    ts.vel[..., :2] += dt * acc
    ts.pos[..., :2] += dt * ts.vel[..., :2]
    return ts


def height_schedule(step, cfg: ScheduleConfig):
    """Arm z offset: linear descent to -z_drop_total, then held."""
    frac = np.minimum(np.asarray(step, dtype=float) / cfg.z_drop_steps, 1.0)
    return -cfg.z_drop_total * frac


def treadmill_pd(
    force_x,
    pitch,
    v_base: float = TREADMILL_V_BASE,
    kp_force: float = TREADMILL_KP_FORCE,
    kp_pitch: float = TREADMILL_KP_PITCH,
    v_max: float = TREADMILL_V_MAX,
):
    """Belt speed from fore-aft tether force and torso pitch, clamped."""
    v = v_base + kp_force * np.asarray(force_x, dtype=float) + kp_pitch * np.asarray(pitch, dtype=float)
    return np.clip(v, 0.0, v_max)


def swing_arm_target(mode, theta, x0, a_arm: float):
    """Fore-aft arm target for the swing task.

    ``theta`` is the swing phase; helping strokes the arm in quadrature
    ahead of the swing displacement (x0 + A cos theta), perturbing is the
    phase-inverted stroke, and fixed holds x0.
    """
    mode = np.asarray(mode)
    stroke = a_arm * np.cos(np.asarray(theta, dtype=float))
    out = np.where(
        mode == MODE_HELPING,
        x0 + stroke,
        np.where(mode == MODE_PERTURBING, x0 - stroke, x0 + np.zeros_like(stroke)),
    )
    return out if out.ndim else float(out)


def bin_schedule(batch_len: int, mode: int, cfg: ScheduleConfig, rng: np.random.Generator):
    """Per-step mode codes for one data batch split into equal bins.

    Helping marks ``helping_bins`` bins drawn from the last 4 of 5;
    perturbing marks ``perturbing_bins`` bins drawn from the first 4.
    The final bin absorbs any remainder when the batch does not divide
    evenly.
    """
    if batch_len < cfg.bins_per_batch:
        raise ConfigurationError("batch shorter than one step per bin")
    out = np.full(batch_len, MODE_FIXED, dtype=np.int8)
    if mode == MODE_FIXED or mode == MODE_COMPLIANT:
        return out
    nb = cfg.bins_per_batch
    per = batch_len // nb
    edges = [(i * per, (i + 1) * per if i < nb - 1 else batch_len) for i in range(nb)]
    if mode == MODE_HELPING:
        chosen = rng.choice(np.arange(1, nb), size=cfg.helping_bins, replace=False)
        code = MODE_HELPING
    elif mode == MODE_PERTURBING:
        chosen = rng.choice(np.arange(0, nb - 1), size=cfg.perturbing_bins, replace=False)
        code = MODE_PERTURBING
    else:
        raise ConfigurationError(f"unknown schedule mode {mode!r}")
    for b in chosen:
        lo, hi = edges[int(b)]
        out[lo:hi] = code
    return out


def detect_failure(pitch, force, thresholds: FailureThresholds):
    """True where the torso pitch or the XY tether force leaves bounds."""
    pitch = np.asarray(pitch, dtype=float)
    f = np.asarray(force, dtype=float)
    bad = (
        (np.abs(pitch) > thresholds.pitch_max)
        | (np.abs(f[..., 0]) > thresholds.force_max)
        | (np.abs(f[..., 1]) > thresholds.force_max)
    )
    return bad if bad.ndim else bool(bad)


def auto_reset(env, ts: TeacherState, mask, cfg: ScheduleConfig):
    """Reset the masked envs and lift their arms to the schedule height.

    The arm returns to the *current* schedule offset, not the initial
    height, so the curriculum never rewinds.  Returns fresh student
    observations for the reset rows.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return None
    obs = env.reset_envs(mask)
    ts.pos[mask, 0] = ts.anchor[mask, 0]
    ts.pos[mask, 1] = ts.anchor[mask, 1]
    ts.pos[mask, 2] = ts.anchor[mask, 2] + height_schedule(ts.schedule_step[mask], cfg)
    ts.vel[mask] = 0.0
    return obs
