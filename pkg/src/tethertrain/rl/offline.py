"""Offline transition datasets and critic pretraining.

Datasets are JSON-lines: a header row naming the layout (dims, count,
format version), then one record per transition.  Floats serialize via
Python's shortest round-trip repr, so a load/save cycle is bit-exact.

Critic pretraining is fitted value iteration on the stored transitions:
alternate computing one-step TD targets from the frozen current critic
with a few epochs of regression onto them.  Targets are clamped to the
value range implied by the observed per-step rewards, which keeps early
bootstrap noise from running away.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from ..nn import AdamState, GradientTape, adam_step
from .types import RolloutBatch, Transition

DATASET_FORMAT = 1


def batch_to_transitions(batch: RolloutBatch) -> list:
    """Unroll a time-major batch into per-step records, env-major order."""
    out = []
    for i in range(batch.n_envs):
        for t in range(batch.horizon):
            out.append(
                Transition(
                    obs=batch.obs[t, i],
                    priv=batch.priv[t, i],
                    action=batch.actions[t, i],
                    log_prob=float(batch.log_probs[t, i]),
                    reward=float(batch.rewards[t, i]),
                    value=float(batch.values[t, i]),
                    done=bool(batch.dones[t, i]),
                    env_index=int(batch.env_index[t, i]),
                )
            )
    return out


def save_transitions(path, transitions: list) -> None:
    if not transitions:
        raise ConfigurationError("refusing to write an empty dataset")
    first = transitions[0]
    header = {
        "format": DATASET_FORMAT,
        "count": len(transitions),
        "obs_dim": len(first.obs),
        "priv_dim": len(first.priv),
        "act_dim": len(first.action),
        "columns": ["obs", "priv", "action", "log_prob", "reward", "value", "done", "env_index"],
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in transitions:
            rec = {
                "obs": [float(v) for v in tr.obs],
                "priv": [float(v) for v in tr.priv],
                "action": [float(v) for v in tr.action],
                "log_prob": tr.log_prob,
                "reward": tr.reward,
                "value": tr.value,
                "done": int(tr.done),
                "env_index": tr.env_index,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_transitions(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigurationError(f"empty dataset file {path}")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise ConfigurationError(f"unsupported dataset format {header.get('format')!r}")
    out = []
    for line in lines[1:]:
        rec = json.loads(line)
        out.append(
            Transition(
                obs=np.array(rec["obs"]),
                priv=np.array(rec["priv"]),
                action=np.array(rec["action"]),
                log_prob=rec["log_prob"],
                reward=rec["reward"],
                value=rec["value"],
                done=bool(rec["done"]),
                env_index=rec["env_index"],
            )
        )
    if len(out) != header["count"]:
        raise ConfigurationError(f"dataset truncated: header says {header['count']}, got {len(out)}")
    return out


@dataclass
class OfflineConfig:
    gamma: float = 0.99
    outer_iters: int = 20
    epochs_per_iter: int = 10
    lr: float = 3e-3


def pretrain_critic_offline(critic, transitions: list, cfg: OfflineConfig | None = None):
    """Fit the critic to the offline data by clamped value iteration.

    Returns (critic, loss_trace).  Transitions must be time-ordered per
    env (the collector's env-major unrolling satisfies this); the final
    transition of each env contributes no bootstrap target.
    """
    cfg = cfg or OfflineConfig()
    if not transitions:
        raise ConfigurationError("cannot pretrain on an empty dataset")
    priv = np.stack([tr.priv for tr in transitions])
    rewards = np.array([tr.reward for tr in transitions])
    dones = np.array([tr.done for tr in transitions], dtype=bool)
    env_ids = np.array([tr.env_index for tr in transitions])

    # rows whose successor row continues the same env's trajectory
    has_next = np.zeros(len(transitions), dtype=bool)
    has_next[:-1] = env_ids[:-1] == env_ids[1:]
    usable = has_next | dones  # terminal rows need no successor

    lo = rewards.min() / (1.0 - cfg.gamma)
    hi = rewards.max() / (1.0 - cfg.gamma)
    lo, hi = min(lo, rewards.min()), max(hi, rewards.max())

    opt = AdamState(cfg.lr)
    trace = []
    for _ in range(cfg.outer_iters):
        v_next = np.zeros(len(transitions))
        v_all = critic.value(priv)
        v_next[:-1] = v_all[1:]
        targets = rewards + cfg.gamma * np.where(dones, 0.0, v_next)
        targets = np.clip(targets, lo, hi)
        t_sel = targets[usable]
        p_sel = priv[usable]
        n = len(t_sel)
        for _ in range(cfg.epochs_per_iter):
            tape = GradientTape()
            v = critic.value(p_sel, tape=tape)
            err = v - t_sel
            loss = float(np.mean(err * err))
            grads = critic.backward(tape, 2.0 * err / n)
            grads = {k: g for k, g in grads.items() if k != "_input"}
            adam_step(opt, critic.params(), grads)
        trace.append(loss)
    return critic, trace
