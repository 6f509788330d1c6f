"""Suspended swing: the robot hangs from the arm and pumps with its legs.

The robot is reduced to a point mass at distance r below the pivot (the
arm end-effector).  Three pitch joints (hip, knee, ankle), mirrored
left/right, run the same servo model as the walker and couple into the
swing in two ways: bending shifts the CoM along the rope (r and its
rate), and swinging the legs exchanges angular momentum with the
pendulum (the -I_legs * sdd reaction term).  The pivot can translate
fore-aft, so an active arm forces the swing directly.

The swing angle pair integrates with RK4 at the physics rate: the energy
audit demands per-step fluctuations far below what a symplectic Euler
step leaves near the turning points.  The horizontal pivot force seen by
the arm's sensor is logged into a ring buffer at the control rate; the
spectral reward and the phase tracker read that buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .. import teacher as teach
from ..errors import ConfigurationError
from .params import PhysicsParams

__all__ = ["SwingConsts", "SwingEnv", "SWING_OBS_LAYOUT"]

SWING_OBS_LAYOUT = (
    ("phase", 1),
    ("command", 1),
    ("joint_offset", 3),
    ("joint_velocity", 3),
    ("prev_action", 3),
    ("torso_ang_vel", 1),
    ("torso_pitch", 1),
)


@dataclass
class SwingConsts:
    dt_ctrl: float = 0.02
    substeps: int = 10
    gravity: float = 9.81

    mass: float = 3.4  # kg, suspended robot
    rope_len: float = 0.65  # m, pivot to CoM at neutral pose
    leg_inertia: float = 0.05  # kg m^2, legs' relative swing inertia
    swing_damping: float = 0.12  # N m s, rope/air losses on the swing angle

    # how joint angles move the CoM along the rope and swing the legs
    com_shift: tuple = (0.05, 0.04, 0.02)  # m/rad per joint
    leg_swing: tuple = (0.5, 0.25, 0.1)  # rad/rad per joint

    joint_kp: float = 6.0
    joint_kd: float = 0.15
    joint_inertia: float = 0.004
    joint_damping: float = 0.06
    joint_coulomb: float = 0.02
    joint_vel_eps: float = 0.05
    joint_limit: float = 0.8  # rad
    action_scale: float = 0.6

    arm_bandwidth: float = 15.0  # rad/s, position-servo stroke tracking
    force_window: int = 1000  # ring-buffer samples at the control rate

    horizon: int = 1000
    init_angle: float = 0.05  # rad
    pose_noise: float = 0.02
    angle_target: float = np.pi / 6  # command channel fed to the policy

    def to_dict(self) -> dict:
        d = asdict(self)
        d["com_shift"] = list(self.com_shift)
        d["leg_swing"] = list(self.leg_swing)
        return d

    def natural_frequency(self) -> float:
        """Small-swing natural frequency in Hz at the neutral pose."""
        m, r = self.mass, self.rope_len
        w2 = m * self.gravity * r / (m * r * r + self.leg_inertia)
        return float(np.sqrt(w2) / (2 * np.pi))


class SwingEnv:
    OBS_DIM = sum(w for _, w in SWING_OBS_LAYOUT)
    ACT_DIM = 3

    def __init__(self, params: PhysicsParams | None = None, consts: SwingConsts | None = None, seed: int = 0, n: int = 1):
        self.consts = consts or SwingConsts()
        self.params = params or PhysicsParams()
        self.seed = int(seed)
        self.n = int(n)
        if self.n < 1:
            raise ConfigurationError("need at least one env")
        c = self.consts
        p = self.params
        self.mass = c.mass + p.body_mass_delta + p.ee_mass
        self.b_swing = c.swing_damping * p.damping_scale
        self.joint_inertia = c.joint_inertia * p.armature_scale
        self.joint_damping = c.joint_damping * p.damping_scale
        self.joint_coulomb = c.joint_coulomb * p.friction_loss_scale
        self.w_r = np.asarray(c.com_shift)
        self.w_s = np.asarray(c.leg_swing)
        self.rng = np.random.default_rng(seed)
        self._alloc()
        self.reset_all()

    def _alloc(self):
        n = self.n
        self.theta = np.zeros(n)
        self.theta_d = np.zeros(n)
        self.q = np.zeros((n, 3))
        self.qd = np.zeros((n, 3))
        self.arm_x = np.zeros(n)
        self.arm_vx = np.zeros(n)
        self.phase = np.zeros(n)
        self.prev_action = np.zeros((n, 3))
        self.step_index = np.zeros(n, dtype=np.int64)
        self.force_hist = np.zeros((n, self.consts.force_window))
        self.fault = np.zeros(n, dtype=bool)
        self._sensor_force = np.zeros((n, 3))
        self._sensor_torque = np.zeros((n, 3))

    def reset_all(self):
        return self.reset_envs(np.ones(self.n, dtype=bool))

    def reset_envs(self, mask):
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return None
        c = self.consts
        k = idx.size
        self.theta[idx] = c.init_angle + self.rng.uniform(-c.pose_noise, c.pose_noise, size=k)
        self.theta_d[idx] = 0.0
        self.q[idx] = self.rng.uniform(-c.pose_noise, c.pose_noise, size=(k, 3))
        self.qd[idx] = 0.0
        self.arm_x[idx] = 0.0
        self.arm_vx[idx] = 0.0
        self.phase[idx] = 0.0
        self.prev_action[idx] = 0.0
        self.step_index[idx] = 0
        self.force_hist[idx] = 0.0
        self.fault[idx] = False
        self._sensor_force[idx] = 0.0
        self._sensor_force[idx, 2] = -self.mass * c.gravity
        self._sensor_torque[idx] = 0.0
        return self.student_obs()[idx]

    # -- dynamics -------------------------------------------------------------

    def _com_distance(self):
        c = self.consts
        r = c.rope_len - self.q @ self.w_r
        return np.clip(r, 0.3 * c.rope_len, 1.2 * c.rope_len)

    def _mass_velocity(self, r, r_dot):
        st, ct = np.sin(self.theta), np.cos(self.theta)
        vx = self.arm_vx + r_dot * st + r * self.theta_d * ct
        vz = -r_dot * ct + r * self.theta_d * st
        return vx, vz

    def mechanical_energy(self):
        """Kinetic + potential energy of the swing DOF (zero at hang)."""
        c = self.consts
        r = self._com_distance()
        i_tot = self.mass * r * r + c.leg_inertia
        kin = 0.5 * i_tot * self.theta_d**2
        pot = self.mass * c.gravity * r * (1.0 - np.cos(self.theta))
        return kin + pot

    def step(self, actions, ts: teach.TeacherState, arm_target_x=None):
        """One control period; ``arm_target_x`` drives the stroke servo.

        When None the arm holds its anchor x.  The teacher state's pose,
        wrench, and schedule counter are refreshed in place.
        """
        c = self.consts
        a = np.clip(np.asarray(actions, dtype=float).reshape(self.n, 3), -1.0, 1.0)
        target = np.clip(c.action_scale * a, -c.joint_limit, c.joint_limit)
        if arm_target_x is None:
            arm_target_x = ts.anchor[:, 0]
        arm_target_x = np.asarray(arm_target_x, dtype=float)

        dt = c.dt_ctrl / c.substeps
        g = c.gravity
        m = self.mass
        for _ in range(c.substeps):
            # arm stroke servo (critically damped second order)
            wa = c.arm_bandwidth
            arm_acc = wa * wa * (arm_target_x - self.arm_x) - 2.0 * wa * self.arm_vx
            v_m0 = self._mass_velocity(self._com_distance(), -(self.qd @ self.w_r))
            self.arm_vx += dt * arm_acc
            self.arm_x += dt * self.arm_vx

            # joint servos (identical model to the walker's)
            tau_pd = c.joint_kp * (target - self.q) - c.joint_kd * self.qd
            tau_fric = self.joint_coulomb * np.tanh(self.qd / c.joint_vel_eps)
            acc_other = (tau_pd - tau_fric) / self.joint_inertia
            qd_new = (self.qd + dt * acc_other) / (1.0 + dt * self.joint_damping / self.joint_inertia)
            qdd_eff = (qd_new - self.qd) / dt
            self.qd = qd_new
            self.q = self.q + dt * self.qd

            r = self._com_distance()
            r_dot = -(self.qd @ self.w_r)
            s_dd = qdd_eff @ self.w_s
            i_tot = m * r * r + c.leg_inertia

            def deriv(th, thd):
                tau = (
                    -m * g * r * np.sin(th)
                    - m * r * np.cos(th) * arm_acc
                    - 2.0 * m * r * r_dot * thd
                    - self.b_swing * thd
                    - c.leg_inertia * s_dd
                )
                return thd, tau / i_tot

            k1t, k1v = deriv(self.theta, self.theta_d)
            k2t, k2v = deriv(self.theta + 0.5 * dt * k1t, self.theta_d + 0.5 * dt * k1v)
            k3t, k3v = deriv(self.theta + 0.5 * dt * k2t, self.theta_d + 0.5 * dt * k2v)
            k4t, k4v = deriv(self.theta + dt * k3t, self.theta_d + dt * k3v)
            self.theta = self.theta + (dt / 6.0) * (k1t + 2 * k2t + 2 * k3t + k4t)
            self.theta_d = self.theta_d + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)

            # sensor force: reaction of the swinging payload on the arm
            v_m1 = self._mass_velocity(self._com_distance(), -(self.qd @ self.w_r))
            a_mx = (v_m1[0] - v_m0[0]) / dt
            a_mz = (v_m1[1] - v_m0[1]) / dt
            self._sensor_force[:, 0] = -m * a_mx
            self._sensor_force[:, 2] = -m * (g + a_mz)
            rx = r * np.sin(self.theta)
            rz = -r * np.cos(self.theta)
            self._sensor_torque[:, 1] = rx * self._sensor_force[:, 2] - rz * self._sensor_force[:, 0]

        ts.pos[:, 0] = self.arm_x
        ts.vel[:, 0] = self.arm_vx
        ts.force[...] = self._sensor_force
        ts.torque[...] = self._sensor_torque
        ts.schedule_step += 1

        self.force_hist[:, :-1] = self.force_hist[:, 1:]
        self.force_hist[:, -1] = self._sensor_force[:, 0]

        self.prev_action = a
        nominal_f = c.natural_frequency()
        self.phase = np.mod(self.phase + 2 * np.pi * nominal_f * c.dt_ctrl, 2 * np.pi)
        self.step_index += 1

        bad = ~(
            np.isfinite(self.theta)
            & np.isfinite(self.theta_d)
            & np.isfinite(self.q).all(axis=1)
            & np.isfinite(self.qd).all(axis=1)
        )
        if bad.any():
            self.fault |= bad
            patch = np.flatnonzero(bad)
            self.theta[patch] = 0.0
            self.theta_d[patch] = 0.0
            self.q[patch] = 0.0
            self.qd[patch] = 0.0

        info = {
            "pitch": self.theta.copy(),
            "force": self._sensor_force.copy(),
            "torque": self._sensor_torque.copy(),
            "swing_angle": self.theta.copy(),
            "swing_rate": self.theta_d.copy(),
            "arm_x": self.arm_x.copy(),
            "arm_vx": self.arm_vx.copy(),
            "step_index": self.step_index.copy(),
            "fault": self.fault.copy(),
            "horizon_done": self.step_index >= c.horizon,
        }
        return self.student_obs(), self.privileged_obs(), info

    # -- observations -----------------------------------------------------------

    def student_obs(self):
        return np.concatenate(
            [
                self.phase[:, None],
                np.full((self.n, 1), self.consts.angle_target),
                self.q,
                self.qd * 0.1,
                self.prev_action,
                (self.theta_d * 0.5)[:, None],
                self.theta[:, None],
            ],
            axis=1,
        )

    def privileged_obs(self):
        arm = np.zeros((self.n, 3))
        arm[:, 0] = self.arm_x
        return np.concatenate(
            [self.student_obs(), self._sensor_force, self._sensor_torque, arm], axis=1
        )

    @property
    def obs_dim(self) -> int:
        return self.OBS_DIM

    @property
    def priv_dim(self) -> int:
        return self.OBS_DIM + 9

    @property
    def act_dim(self) -> int:
        return self.ACT_DIM

    def config_echo(self) -> dict:
        return {
            "model": "suspended_swing",
            "n_envs": self.n,
            "seed": self.seed,
            "consts": self.consts.to_dict(),
        }
