"""Metric and telemetry logs: append-only CSV with provenance headers."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import teacher as teach


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


class MetricsLog:
    """Append-only CSV with the config hash and seed stamped on top.

    Rows are (wall_step, env_step, *metrics); the env-step column must be
    monotone, which `append` enforces.  Periodic flushing keeps rows on
    disk through a clean shutdown.
    """

    def __init__(self, path, fieldnames, config_hash: str, seed: int, flush_every: int = 10):
        self.path = Path(path)
        self.fieldnames = list(fieldnames)
        self.flush_every = int(flush_every)
        self._rows = 0
        self._last_env_step = -1
        self._fh = open(self.path, "w")
        self._fh.write(f"# config_hash={config_hash}\n")
        self._fh.write(f"# seed={seed}\n")
        self._fh.write(",".join(["wall_step", "env_step"] + self.fieldnames) + "\n")

    def append(self, wall_step: int, env_step: int, metrics: dict) -> None:
        if env_step < self._last_env_step:
            raise ValueError(f"env_step went backwards: {env_step} < {self._last_env_step}")
        self._last_env_step = env_step
        row = [str(int(wall_step)), str(int(env_step))]
        row += [_fmt(metrics.get(name, "")) for name in self.fieldnames]
        self._fh.write(",".join(row) + "\n")
        self._rows += 1
        if self._rows % self.flush_every == 0:
            self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TeacherTelemetry:
    """Per-control-step teacher trace: pose, wrench, belt, failure flag."""

    COLUMNS = (
        "step,mode,arm_x,arm_y,arm_z,force_x,force_y,force_z,"
        "torque_x,torque_y,torque_z,belt_speed,failure"
    )

    def __init__(self, path, config_hash: str, seed: int, flush_every: int = 200):
        self.path = Path(path)
        self.flush_every = int(flush_every)
        self._step = 0
        self._fh = open(self.path, "w")
        self._fh.write(f"# config_hash={config_hash}\n")
        self._fh.write(f"# seed={seed}\n")
        self._fh.write(self.COLUMNS + "\n")

    def append(self, ts: teach.TeacherState, failed) -> None:
        failed = np.atleast_1d(failed)
        for i in range(ts.n):
            row = [
                str(self._step),
                teach.MODE_NAMES[int(ts.mode[i])],
                _fmt(ts.pos[i, 0]),
                _fmt(ts.pos[i, 1]),
                _fmt(ts.pos[i, 2]),
                _fmt(ts.force[i, 0]),
                _fmt(ts.force[i, 1]),
                _fmt(ts.force[i, 2]),
                _fmt(ts.torque[i, 0]),
                _fmt(ts.torque[i, 1]),
                _fmt(ts.torque[i, 2]),
                _fmt(ts.belt_speed[i]),
                "1" if bool(failed[i]) else "0",
            ]
            self._fh.write(",".join(row) + "\n")
        self._step += 1
        if self._step % self.flush_every == 0:
            self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()
