"""Human-exoskeleton squat simulation with NMPC, distilled-DNN and hybrid control."""

from .errors import (
    ConfigError,
    HybridMpcError,
    IntegrationDivergedError,
    JointLimitError,
    SimulationUnstableError,
    TrainingDivergedError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "HybridMpcError",
    "IntegrationDivergedError",
    "JointLimitError",
    "SimulationUnstableError",
    "TrainingDivergedError",
    "__version__",
]
