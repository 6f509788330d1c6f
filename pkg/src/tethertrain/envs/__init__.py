from .params import (
    DEFAULT_RANGES,
    PARAM_NAMES,
    PhysicsParams,
    nominal_params,
    param_normalization,
    sample_physics,
    sample_physics_matrix,
)
from .walker import (
    WALKER_OBS_LAYOUT,
    WalkerConsts,
    WalkerEnv,
    free_joint_velocity_trace,
    joint_release_trace,
)
from .swing import SWING_OBS_LAYOUT, SwingConsts, SwingEnv
from .factory import EnvSet, PSEUDO_REAL_BASE, make_env_set, make_pseudo_real

__all__ = [
    "DEFAULT_RANGES",
    "PARAM_NAMES",
    "PhysicsParams",
    "nominal_params",
    "param_normalization",
    "sample_physics",
    "sample_physics_matrix",
    "WalkerConsts",
    "WalkerEnv",
    "WALKER_OBS_LAYOUT",
    "free_joint_velocity_trace",
    "joint_release_trace",
    "SwingConsts",
    "SwingEnv",
    "SWING_OBS_LAYOUT",
    "EnvSet",
    "PSEUDO_REAL_BASE",
    "make_env_set",
    "make_pseudo_real",
]
