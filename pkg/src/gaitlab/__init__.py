"""Muscle-driven planar gait imitation with exoskeleton assistance.

A desk-scale locomotion stack: a sagittal-plane musculoskeletal walker
imitates reference gait under a multi-term tracking reward, can be
fine-tuned with ideal hip or ankle torque assistance or with simulated
muscle weakness, and is evaluated with standard gait metrics plus a
muscle-level metabolic probe.
"""

__version__ = "0.1.0"

from gaitlab.errors import (
    CheckpointError,
    ConfigError,
    ConvergenceError,
    DataError,
    SimulationDiverged,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "SimulationDiverged",
    "__version__",
]
