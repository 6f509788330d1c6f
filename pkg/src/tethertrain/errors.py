"""Shared exception types."""


class ConfigurationError(ValueError):
    """Bad shapes, ranges, or config fields detected before any work runs."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class TrainingError(RuntimeError):
    """Optimization produced non-finite values; message carries diagnostics."""


class EnvironmentFault(RuntimeError):
    """Simulation state went non-finite; the episode is unrecoverable."""


class CurriculumFault(RuntimeError):
    """The curriculum stalled (e.g. nearly every episode ends in failure)."""
