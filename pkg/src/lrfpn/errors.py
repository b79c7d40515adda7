"""Exception types shared across the package.

Everything raised on purpose derives from LrfpnError so callers can
distinguish our failures from genuine bugs (plain Python exceptions).
"""


class LrfpnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LrfpnError):
    """An operand has the wrong rank, size, or dtype for the requested op."""


class ConfigError(LrfpnError):
    """A run configuration value is out of range or inconsistent."""


class TapeError(LrfpnError):
    """Misuse of the autodiff tape, e.g. backward called twice."""


class TrainingDiverged(LrfpnError):
    """Loss became non-finite during optimisation."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"loss became non-finite at step {step}")


class CheckpointError(LrfpnError):
    """Base class for checkpoint serialisation failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the expected magic bytes."""


class CheckpointTruncatedError(CheckpointError):
    """File ended before the declared payload was read."""


class CheckpointDtypeError(CheckpointError):
    """Unknown dtype tag in a checkpoint record."""
