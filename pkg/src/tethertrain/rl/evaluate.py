"""Policy evaluation: fixed-length runs with exploration disabled."""

from __future__ import annotations

import numpy as np

from ..errors import EnvironmentFault


def evaluate_policy(policy, task, latent_source, steps: int, rng=None, deterministic=True):
    """Run the task for ``steps`` control steps and summarize rewards.

    Returns a dict with the mean per-step reward, completed-episode
    returns, and failure count.  Mean step reward is the robust metric
    at short horizons (episodes may not complete).
    """
    env = task.env
    rng = rng or np.random.default_rng(0)
    n = env.n
    all_idx = np.arange(n)
    acc = np.zeros(n)
    ep_returns = []
    failures = 0
    reward_sum = 0.0
    for t in range(steps):
        z = latent_source.per_env(all_idx)
        if deterministic:
            actions = policy.mean(task.obs, z)
        else:
            actions, _ = policy.sample(task.obs, z, rng)
        task.pre_step(t)
        obs, priv, reward, done, failed, info = task.step(actions)
        if info["fault"].any():
            raise EnvironmentFault("non-finite state during evaluation")
        reward_sum += float(reward.sum())
        acc += reward
        if done.any():
            for i in np.flatnonzero(done):
                ep_returns.append(float(acc[i]))
                acc[i] = 0.0
            failures += int(np.asarray(failed).sum())
        task.obs = obs
        task.priv = priv
        task.reset_done(done)
    return {
        "mean_step_reward": reward_sum / (steps * n),
        "episode_returns": ep_returns,
        "mean_episode_return": float(np.mean(ep_returns)) if ep_returns else float("nan"),
        "failures": failures,
    }
