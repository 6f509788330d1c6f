from .config import EXPERIMENTS, OUTPUT_ROOT_ENV, RunConfig, load_config
from .logging import MetricsLog, TeacherTelemetry
from .runner import run_experiment, film_lr_sweep, walk_ablation, rma_grid, swing_ablation
from .report import report, verify

__all__ = [
    "EXPERIMENTS",
    "OUTPUT_ROOT_ENV",
    "RunConfig",
    "load_config",
    "MetricsLog",
    "TeacherTelemetry",
    "run_experiment",
    "film_lr_sweep",
    "walk_ablation",
    "rma_grid",
    "swing_ablation",
    "report",
    "verify",
]
