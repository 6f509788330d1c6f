from .net import (
    DynamicsEncoder,
    FilmLayer,
    GradientTape,
    Mlp,
    backward,
    film_forward,
    mlp_forward,
)
from .optim import AdamState, adam_step
from .checkpoint import FORMAT_VERSION, checkpoint_bytes, load_checkpoint, save_checkpoint

__all__ = [
    "Mlp",
    "FilmLayer",
    "DynamicsEncoder",
    "GradientTape",
    "mlp_forward",
    "film_forward",
    "backward",
    "AdamState",
    "adam_step",
    "FORMAT_VERSION",
    "checkpoint_bytes",
    "save_checkpoint",
    "load_checkpoint",
]
