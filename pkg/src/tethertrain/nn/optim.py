"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingError

__all__ = ["AdamState", "adam_step"]


class AdamState:
    """Moment accumulators for one parameter group.

    Moments are allocated lazily per parameter name and always mirror the
    parameter's shape.  The step counter increases by one per call to
    `adam_step`, never decreases.
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m: dict = {}
        self.v: dict = {}
        self.step_count = 0


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Apply one Adam update in place to every param that has a gradient.

    Raises TrainingError naming the parameter if its gradient is not
    finite.  Returns the params dict for convenience.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params
