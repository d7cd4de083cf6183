"""Exception types shared across the package."""


class GaitlabError(Exception):
    """Base class for all package errors."""


class ConfigError(GaitlabError):
    """Malformed or inconsistent model / run configuration."""


class DataError(GaitlabError):
    """Malformed reference-motion or trace data."""


class SimulationDiverged(GaitlabError):
    """The physics state left the representable range (NaN/inf or blowup)."""


class ConvergenceError(GaitlabError):
    """An iterative solve failed to reach its tolerance."""


class CheckpointError(GaitlabError):
    """Checkpoint is unreadable or incompatible with the requested setup."""


class TrainingError(GaitlabError):
    """Optimization aborted (non-finite losses, empty replay, ...)."""
