"""Planar five-link treadmill walker on an elastic tether, vectorized.

The morphology is a torso plus two thigh/shank pairs with point feet.
The reduced-order dynamics decouple the bodies: each joint is a servo
with its own inertia (armature), viscous damping and Coulomb loss, and
the torso is a rigid body driven by foot-contact forces, the tether
spring, gravity, and hip reaction torques.  Contact is a penalty model
against the belt surface, whose horizontal speed comes from the
treadmill loop.  Everything is stored as (N, ...) arrays so one instance
steps N domain-randomized environments at once.

A nominal phase-driven gait is built in: commanded joint targets are the
reference gait plus a scaled policy action, mirroring position-setpoint
control around a neutral gait.  Units are SI throughout; pitch is
positive when the torso leans toward +x (the walking direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .. import teacher as teach
from ..errors import ConfigurationError
from .params import PhysicsParams

__all__ = [
    "WalkerConsts",
    "WalkerEnv",
    "free_joint_velocity_trace",
    "joint_release_trace",
    "WALKER_OBS_LAYOUT",
]

# student observation layout (name, width); phase first, torso state last
WALKER_OBS_LAYOUT = (
    ("phase", 1),
    ("command", 1),
    ("joint_offset", 4),
    ("joint_velocity", 4),
    ("prev_action", 4),
    ("torso_ang_vel", 1),
    ("torso_pitch", 1),
)


@dataclass
class WalkerConsts:
    """Model constants; every randomized property stores its nominal value."""

    dt_ctrl: float = 0.02  # s, control period (50 Hz)
    substeps: int = 10  # physics at 500 Hz
    gravity: float = 9.81

    torso_mass: float = 3.4  # kg
    torso_inertia: float = 0.08  # kg m^2, whole-robot pitch inertia
    d_hip: float = 0.10  # m, CoM to hip along torso axis
    d_shoulder: float = 0.15  # m, CoM to tether attachment
    l_thigh: float = 0.12  # m
    l_shank: float = 0.12  # m

    tether_stiffness: float = 1000.0  # N/m (four parallel elastic cords)
    tether_damping: float = 30.0  # N s/m along the rope, cord hysteresis
    tether_natural_len: float = 0.25  # m
    tether_init_stretch: float = 0.02  # m, stretch at reset before the schedule
    tether_stiction: float = 0.0  # N, extra rate-opposing force (pseudo-real gap)
    harness_moment: float = 0.12  # m/rad: shoulder-spread righting per N of tension
    harness_damping: float = 0.8  # N m s, harness hysteresis on pitch

    contact_stiffness: float = 4000.0  # N/m
    contact_damping: float = 60.0  # N s/m
    friction_coeff: float = 0.6  # nominal Coulomb friction vs the belt
    slip_eps: float = 0.1  # m/s, friction smoothing (soft enough for 500 Hz)

    joint_kp: float = 3.0  # N m/rad; soft enough that armature and damping
    joint_kd: float = 0.1  # scales visibly reshape the tracked gait
    joint_inertia: float = 0.004  # kg m^2, nominal armature
    joint_damping: float = 0.08  # N m s/rad
    joint_coulomb: float = 0.04  # N m, nominal friction loss
    joint_vel_eps: float = 0.05  # rad/s, Coulomb smoothing
    hip_limit: float = 1.2  # rad
    knee_lo: float = -0.2
    knee_hi: float = 1.5

    torso_lin_damping: float = 2.0  # N s/m, drag scaled by damping_scale;
    torso_ang_damping: float = 0.004  # a big speed-per-stride spread across envs

    gait_freq: float = 1.5  # Hz
    hip_amp_per_speed: float = 1.6  # rad per (m/s) of command
    knee_amp: float = 0.3  # rad swing-phase lift
    action_scale: float = 0.3  # rad of target authority per unit action

    treadmill_active: bool = True  # False pins the belt at the teacher's value
    speed_filter_tau: float = 0.5  # s, EMA on locomotion speed (strips gait sway)
    force_filter_tau: float = 0.1  # s, EMA on the force feeding the treadmill PD
    horizon: int = 1000  # control steps per episode (20 s)
    pose_noise: float = 0.02  # rad uniform on joints at reset
    perturb_prob: float = 0.005  # per control step
    perturb_v: float = 0.05  # m/s impulse bound
    perturb_w: float = 0.2  # rad/s impulse bound
    perturb_hold: int = 10  # steps the perturbation is reported in priv obs

    command_lo: float = 0.05  # m/s
    command_hi: float = 0.20
    fixed_command: float | None = None  # overrides the range when set

    qd_obs_scale: float = 0.1
    om_obs_scale: float = 0.25

    def to_dict(self) -> dict:
        return asdict(self)


def _relu(x):
    return np.maximum(x, 0.0)


def free_joint_velocity_trace(params: PhysicsParams, consts: WalkerConsts, qd0: float, steps: int, dt: float):
    """Velocity trace of one unactuated joint released at qd0.

    Integrates I qdd = -c qd - tau_f tanh(qd/eps) with the same implicit
    damping used inside the env, for measuring decay constants.
    """
    inertia = consts.joint_inertia * params.armature_scale
    c = consts.joint_damping * params.damping_scale
    tau_f = consts.joint_coulomb * params.friction_loss_scale
    qd = float(qd0)
    out = [qd]
    for _ in range(steps):
        acc = -tau_f * np.tanh(qd / consts.joint_vel_eps) / inertia
        qd = (qd + dt * acc) / (1.0 + dt * c / inertia)
        out.append(qd)
    return np.array(out)


def joint_release_trace(params: PhysicsParams, consts: WalkerConsts, q0: float, steps: int, dt: float):
    """Position trace of a servo joint released from q0 toward target 0.

    Same joint model as inside the env (PD + Coulomb + viscous), used to
    measure ringing/oscillation counts under different loss scales.
    """
    inertia = consts.joint_inertia * params.armature_scale
    c = consts.joint_damping * params.damping_scale
    tau_f = consts.joint_coulomb * params.friction_loss_scale
    q, qd = float(q0), 0.0
    out = [q]
    for _ in range(steps):
        tau = -consts.joint_kp * q - consts.joint_kd * qd - tau_f * np.tanh(qd / consts.joint_vel_eps)
        qd = (qd + dt * tau / inertia) / (1.0 + dt * c / inertia)
        q += dt * qd
        out.append(q)
    return np.array(out)


class WalkerEnv:
    """Vectorized tethered walker.

    ``variant`` selects the privileged-observation layout: "sim" exposes
    simulation-only signals (joint tracking error, world velocity, the
    reference pose, perturbation velocities); "pseudo_real" exposes what
    the rig can measure (joint positions, tracked torso velocity, tether
    force and torque).
    """

    OBS_DIM = sum(w for _, w in WALKER_OBS_LAYOUT)
    ACT_DIM = 4

    def __init__(self, param_matrix, consts: WalkerConsts | None = None, seed: int = 0, variant: str = "sim"):
        pm = np.atleast_2d(np.asarray(param_matrix, dtype=float))
        if pm.shape[1] != 6:
            raise ConfigurationError(f"param matrix must be (n, 6), got {pm.shape}")
        if variant not in ("sim", "pseudo_real"):
            raise ConfigurationError(f"unknown variant {variant!r}")
        self.params = pm
        self.consts = consts or WalkerConsts()
        self.variant = variant
        self.seed = int(seed)
        self.n = pm.shape[0]
        c = self.consts

        # per-env physical constants derived from the randomization vector
        self.mass = c.torso_mass + pm[:, 4] + pm[:, 5]
        self.mu = c.friction_coeff * pm[:, 0]
        self.joint_inertia = (c.joint_inertia * pm[:, 2])[:, None]
        self.joint_damping = (c.joint_damping * pm[:, 1])[:, None]
        self.joint_coulomb = (c.joint_coulomb * pm[:, 3])[:, None]
        self.torso_drag = c.torso_lin_damping * pm[:, 1]

        self.rng = np.random.default_rng(seed)
        self._gains = teach.AdmittanceGains()
        self._alloc()
        self.reset_all()

    # -- state management ---------------------------------------------------

    def _alloc(self):
        n = self.n
        self.x = np.zeros(n)
        self.z = np.zeros(n)
        self.th = np.zeros(n)
        self.vx = np.zeros(n)
        self.vz = np.zeros(n)
        self.om = np.zeros(n)
        self.q = np.zeros((n, 4))  # hipL, kneeL, hipR, kneeR
        self.qd = np.zeros((n, 4))
        self.phase = np.zeros(n)
        self.prev_action = np.zeros((n, 4))
        self.step_index = np.zeros(n, dtype=np.int64)
        self.command = np.zeros(n)
        self.perturb_v = np.zeros(n)
        self.perturb_w = np.zeros(n)
        self.perturb_left = np.zeros(n, dtype=np.int64)
        self.fault = np.zeros(n, dtype=bool)
        self._sensor_force = np.zeros((n, 3))
        self._sensor_torque = np.zeros((n, 3))
        self._ref = np.zeros((n, 4))
        self._loco_smooth = np.zeros(n)
        self._force_smooth = np.zeros(n)

    def standing_height(self) -> float:
        c = self.consts
        return c.d_hip + c.l_thigh + c.l_shank

    def nominal_arm_anchor(self) -> np.ndarray:
        """Arm xyz that pre-stretches the tether by tether_init_stretch.

        The shoulder sits d_shoulder above the CoM of a standing robot.
        """
        c = self.consts
        sh_z = self.standing_height() + c.d_shoulder
        return np.array([0.0, 0.0, sh_z + c.tether_natural_len + c.tether_init_stretch])

    def reset_all(self):
        return self.reset_envs(np.ones(self.n, dtype=bool))

    def reset_envs(self, mask):
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None
        c = self.consts
        k = idx.size
        self.x[idx] = 0.0
        # start settled: feet pre-penetrated so contact balances the weight
        # the tether does not already carry
        support = c.tether_stiffness * c.tether_init_stretch
        pen0 = np.maximum(self.mass[idx] * c.gravity - support, 0.0) / (2 * c.contact_stiffness)
        self.z[idx] = self.standing_height() - pen0
        self.th[idx] = 0.0
        self.vx[idx] = 0.0
        self.vz[idx] = 0.0
        self.om[idx] = 0.0
        self.q[idx] = self.rng.uniform(-c.pose_noise, c.pose_noise, size=(k, 4))
        self.qd[idx] = 0.0
        self.phase[idx] = 0.0
        self.prev_action[idx] = 0.0
        self.step_index[idx] = 0
        if c.fixed_command is not None:
            self.command[idx] = c.fixed_command
        else:
            self.command[idx] = self.rng.uniform(c.command_lo, c.command_hi, size=k)
        self.perturb_v[idx] = 0.0
        self.perturb_w[idx] = 0.0
        self.perturb_left[idx] = 0
        self.fault[idx] = False
        self._sensor_force[idx] = 0.0
        self._sensor_torque[idx] = 0.0
        self._loco_smooth[idx] = 0.0
        self._force_smooth[idx] = 0.0
        return self.student_obs()[idx]

    # -- kinematics ----------------------------------------------------------

    def _torso_axis(self):
        return np.sin(self.th), np.cos(self.th)

    def shoulder_pos(self):
        ux, uz = self._torso_axis()
        return self.x + self.consts.d_shoulder * ux, self.z + self.consts.d_shoulder * uz

    def _foot_geometry(self):
        """Foot positions, velocities and contact Jacobian rows per leg."""
        c = self.consts
        ux, uz = self._torso_axis()
        hip_x = self.x - c.d_hip * ux
        hip_z = self.z - c.d_hip * uz
        hip_vx = self.vx - c.d_hip * np.cos(self.th) * self.om
        hip_vz = self.vz + c.d_hip * np.sin(self.th) * self.om
        out = []
        for leg in (0, 1):
            qh = self.q[:, 2 * leg]
            qk = self.q[:, 2 * leg + 1]
            qdh = self.qd[:, 2 * leg]
            qdk = self.qd[:, 2 * leg + 1]
            alpha = self.th + qh
            beta = alpha + qk
            sa, ca = np.sin(alpha), np.cos(alpha)
            sb, cb = np.sin(beta), np.cos(beta)
            fx = hip_x + c.l_thigh * sa + c.l_shank * sb
            fz = hip_z - c.l_thigh * ca - c.l_shank * cb
            ad = self.om + qdh
            bd = ad + qdk
            fvx = hip_vx + c.l_thigh * ca * ad + c.l_shank * cb * bd
            fvz = hip_vz + c.l_thigh * sa * ad + c.l_shank * sb * bd
            jh = (c.l_thigh * ca + c.l_shank * cb, c.l_thigh * sa + c.l_shank * sb)
            jk = (c.l_shank * cb, c.l_shank * sb)
            out.append((fx, fz, fvx, fvz, jh, jk))
        return out

    def reference_gait(self):
        """Open-loop marching pattern around which actions are offsets.

        Hip stride scales with the commanded speed; the swing-phase knee
        lift scales with it too, so a zero command stands still.
        """
        c = self.consts
        amp = c.hip_amp_per_speed * self.command
        lift = c.knee_amp * np.minimum(self.command / 0.15, 1.0)
        ref = np.zeros((self.n, 4))
        for leg, offset in ((0, 0.0), (1, np.pi)):
            ph = self.phase + offset
            ref[:, 2 * leg] = amp * np.cos(ph)
            ref[:, 2 * leg + 1] = lift * _relu(-np.sin(ph))
        return ref

    # -- dynamics ------------------------------------------------------------

    def _tether_force(self, ts: teach.TeacherState):
        """Force on the robot from the arm-held elastic tether (x, z).

        Slack ropes carry nothing.  In the pseudo-real variant an extra
        stiction term opposes the extension rate, an effect the training
        distribution never models.
        """
        c = self.consts
        sh_x, sh_z = self.shoulder_pos()
        dx = ts.pos[:, 0] - sh_x
        dz = ts.pos[:, 2] - sh_z
        dist = np.sqrt(dx * dx + dz * dz) + 1e-12
        taut = dist > c.tether_natural_len
        tension = np.where(taut, c.tether_stiffness * (dist - c.tether_natural_len), 0.0)
        sh_vx = self.vx + c.d_shoulder * np.cos(self.th) * self.om
        sh_vz = self.vz - c.d_shoulder * np.sin(self.th) * self.om
        ext_rate = (dx * (ts.vel[:, 0] - sh_vx) + dz * (ts.vel[:, 2] - sh_vz)) / dist
        tension = np.where(taut, np.maximum(tension + c.tether_damping * ext_rate, 0.0), 0.0)
        if c.tether_stiction > 0.0:
            tension = np.where(
                taut, np.maximum(tension + c.tether_stiction * np.tanh(ext_rate / 0.005), 0.0), 0.0
            )
        fx = tension * dx / dist
        fz = tension * dz / dist
        # four-rope shoulder harness: a taut spread harness also resists
        # torso pitch, with a moment that grows with the carried tension
        moment = np.where(
            taut,
            -self.consts.harness_moment * tension * self.th - self.consts.harness_damping * self.om,
            0.0,
        )
        return fx, fz, sh_x, sh_z, moment

    def step(self, actions, ts: teach.TeacherState):
        """Advance one control period (``substeps`` physics steps).

        Returns (student_obs, priv_obs, info); info carries per-env
        signals the caller wires into rewards and failure handling.
        """
        c = self.consts
        a = np.clip(np.asarray(actions, dtype=float).reshape(self.n, 4), -1.0, 1.0)
        ref = self.reference_gait()
        target = ref + c.action_scale * a
        target[:, 0::2] = np.clip(target[:, 0::2], -c.hip_limit, c.hip_limit)
        target[:, 1::2] = np.clip(target[:, 1::2], c.knee_lo, c.knee_hi)
        self._ref = ref

        # treadmill loop runs once per control step on the filtered force
        if c.treadmill_active:
            ts.belt_speed[...] = teach.treadmill_pd(self._force_smooth, self.th)

        dt = c.dt_ctrl / c.substeps
        g = c.gravity
        compliant = ts.mode == teach.MODE_COMPLIANT
        frozen = ~compliant
        for _ in range(c.substeps):
            # compliant arm reacts to the previously sensed force
            if compliant.any():
                if frozen.any():
                    held_pos = ts.pos[frozen].copy()
                    held_vel = ts.vel[frozen].copy()
                teach.admittance_step(ts, self._gains, self._sensor_force[:, :2], dt)
                if frozen.any():
                    ts.pos[frozen] = held_pos
                    ts.vel[frozen] = held_vel

            feet = self._foot_geometry()
            fc_x = np.zeros(self.n)
            fc_z = np.zeros(self.n)
            torque = np.zeros(self.n)
            for leg, (fx, fz, fvx, fvz, jh, jk) in enumerate(feet):
                pen = -fz
                in_contact = pen > 0.0
                normal = np.where(
                    in_contact, _relu(c.contact_stiffness * pen - c.contact_damping * fvz), 0.0
                )
                slip = fvx + ts.belt_speed
                fric = -self.mu * normal * np.tanh(slip / c.slip_eps)
                fc_x += fric
                fc_z += normal
                torque += fric * (fz - self.z) - normal * (fx - self.x)

            ft_x, ft_z, sh_x, sh_z, harness_m = self._tether_force(ts)
            torque += ft_x * (sh_z - self.z) - ft_z * (sh_x - self.x) + harness_m

            # joint servos; contact load on the joints is not fed back
            # (the explicit integrator cannot take that stiffness at 500 Hz)
            tau_pd = c.joint_kp * (target - self.q) - c.joint_kd * self.qd
            tau_fric = self.joint_coulomb * np.tanh(self.qd / c.joint_vel_eps)
            qdd = (tau_pd - tau_fric) / self.joint_inertia
            self.qd = (self.qd + dt * qdd) / (1.0 + dt * self.joint_damping / self.joint_inertia)
            self.q = self.q + dt * self.qd

            # hip actuation reacts on the torso
            torque -= tau_pd[:, 0] + tau_pd[:, 2]

            ax = (fc_x + ft_x) / self.mass
            az = (fc_z + ft_z) / self.mass - g
            aw = torque / c.torso_inertia
            self.vx = (self.vx + dt * ax) / (1.0 + dt * self.torso_drag / self.mass)
            self.vz = (self.vz + dt * az) / (1.0 + dt * self.torso_drag / self.mass)
            self.om = (self.om + dt * aw) / (1.0 + dt * c.torso_ang_damping / c.torso_inertia)
            self.x = self.x + dt * self.vx
            self.z = self.z + dt * self.vz
            self.th = self.th + dt * self.om

            # sensor sees the reaction of the rope on the arm
            self._sensor_force[:, 0] = -ft_x
            self._sensor_force[:, 2] = -ft_z
            self._sensor_torque[:, 1] = (sh_x - ts.pos[:, 0]) * self._sensor_force[:, 2] - (
                sh_z - ts.pos[:, 2]
            ) * self._sensor_force[:, 0]

        ts.force[...] = self._sensor_force
        ts.torque[...] = self._sensor_torque

        self.prev_action = a
        self.phase = np.mod(self.phase + 2 * np.pi * c.gait_freq * c.dt_ctrl, 2 * np.pi)
        self.step_index += 1
        ts.schedule_step += 1

        a_speed = c.dt_ctrl / (c.speed_filter_tau + c.dt_ctrl)
        a_force = c.dt_ctrl / (c.force_filter_tau + c.dt_ctrl)
        self._loco_smooth += a_speed * ((self.vx + ts.belt_speed) - self._loco_smooth)
        self._force_smooth += a_force * (self._sensor_force[:, 0] - self._force_smooth)

        # occasional velocity impulses; reported in the sim privileged obs
        kick = self.rng.random(self.n) < c.perturb_prob
        if kick.any():
            kv = self.rng.uniform(-c.perturb_v, c.perturb_v, size=self.n)
            kw = self.rng.uniform(-c.perturb_w, c.perturb_w, size=self.n)
            self.vx = np.where(kick, self.vx + kv, self.vx)
            self.om = np.where(kick, self.om + kw, self.om)
            self.perturb_v = np.where(kick, kv, self.perturb_v)
            self.perturb_w = np.where(kick, kw, self.perturb_w)
            self.perturb_left = np.where(kick, c.perturb_hold, self.perturb_left)
        self.perturb_left = np.maximum(self.perturb_left - 1, 0)
        live = self.perturb_left > 0
        self.perturb_v = np.where(live, self.perturb_v, 0.0)
        self.perturb_w = np.where(live, self.perturb_w, 0.0)

        bad = ~np.isfinite(
            np.stack([self.x, self.z, self.th, self.vx, self.vz, self.om], axis=0)
        ).all(axis=0) | ~np.isfinite(self.q).all(axis=1) | ~np.isfinite(self.qd).all(axis=1)
        if bad.any():
            self.fault |= bad
            patch = np.flatnonzero(bad)
            for arr in (self.x, self.z, self.th, self.vx, self.vz, self.om):
                arr[patch] = 0.0
            self.q[patch] = 0.0
            self.qd[patch] = 0.0

        info = {
            "pitch": self.th.copy(),
            "force": self._sensor_force.copy(),
            "torque": self._sensor_torque.copy(),
            "belt_speed": ts.belt_speed.copy(),
            "loco_speed": self.vx + ts.belt_speed,
            "loco_speed_smooth": self._loco_smooth.copy(),
            "command": self.command.copy(),
            "step_index": self.step_index.copy(),
            "fault": self.fault.copy(),
            "horizon_done": self.step_index >= c.horizon,
        }
        return self.student_obs(), self.privileged_obs(), info

    # -- observations ----------------------------------------------------------

    def student_obs(self):
        c = self.consts
        return np.concatenate(
            [
                self.phase[:, None],
                self.command[:, None],
                self.q,
                self.qd * c.qd_obs_scale,
                self.prev_action,
                (self.om * c.om_obs_scale)[:, None],
                self.th[:, None],
            ],
            axis=1,
        )

    def privileged_obs(self):
        c = self.consts
        base = self.student_obs()
        if self.variant == "sim":
            extra = np.concatenate(
                [
                    self.q - self._ref,
                    self.vx[:, None],
                    self.vz[:, None],
                    self._ref,
                    self.perturb_v[:, None],
                    self.perturb_w[:, None],
                ],
                axis=1,
            )
        else:
            extra = np.concatenate(
                [
                    self.q,
                    self.vx[:, None],
                    self.vz[:, None],
                    self._sensor_force,
                    self._sensor_torque,
                ],
                axis=1,
            )
        return np.concatenate([base, extra], axis=1)

    @property
    def obs_dim(self) -> int:
        return self.OBS_DIM

    @property
    def priv_dim(self) -> int:
        return self.OBS_DIM + 12

    @property
    def act_dim(self) -> int:
        return self.ACT_DIM

    def config_echo(self) -> dict:
        return {
            "model": "tethered_walker",
            "variant": self.variant,
            "n_envs": self.n,
            "seed": self.seed,
            "consts": self.consts.to_dict(),
        }
