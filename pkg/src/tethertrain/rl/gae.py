"""Generalized advantage estimation over time-major batches."""

from __future__ import annotations

import numpy as np

from .types import RolloutBatch


def gae(batch: RolloutBatch, gamma: float, lam: float) -> RolloutBatch:
    """Fill ``advantages`` and ``returns`` in place and return the batch.

    Standard backward recursion; a done flag cuts the bootstrap so value
    never leaks across episode boundaries.
    """
    t_len, n = batch.rewards.shape
    adv = np.zeros((t_len, n))
    next_value = batch.bootstrap_value
    carry = np.zeros(n)
    for t in range(t_len - 1, -1, -1):
        live = 1.0 - batch.dones[t].astype(float)
        delta = batch.rewards[t] + gamma * next_value * live - batch.values[t]
        carry = delta + gamma * lam * live * carry
        adv[t] = carry
        next_value = batch.values[t]
    batch.advantages = adv
    batch.returns = adv + batch.values
    return batch
