"""Location-refining feature pyramid neck: kernels, models, and runners."""

from .errors import (
    CheckpointError,
    ConfigError,
    LrfpnError,
    ShapeError,
    TapeError,
    TrainingDiverged,
)
from .tensor import Param, Tape, Tensor, backward, sgd_step, zero_grads

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "LrfpnError",
    "Param",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "TrainingDiverged",
    "backward",
    "sgd_step",
    "zero_grads",
    "__version__",
]
