"""Domain-specific exception types shared across the package."""


class FaptpError(Exception):
    """Base class for all package errors."""


class DomainError(FaptpError, ValueError):
    """An input value lies outside its documented domain."""


class DimensionError(FaptpError, ValueError):
    """Array shapes are inconsistent with each other."""


class SingularTransmissionError(DomainError):
    """Transmission fell below the safe inversion floor."""

    def __init__(self, n_pixels, t_min):
        self.n_pixels = int(n_pixels)
        self.t_min = float(t_min)
        super().__init__(
            f"{self.n_pixels} pixel(s) have transmission below t_min={self.t_min:g}; "
            "inversion would be numerically singular"
        )


class ParseError(FaptpError, ValueError):
    """A data file could not be parsed; message carries line numbers."""


class ConfigError(FaptpError, ValueError):
    """Invalid or inconsistent configuration."""


class InputError(FaptpError, ValueError):
    """A structurally invalid input (e.g. box outside image bounds)."""


class UsageError(FaptpError, RuntimeError):
    """An operation was called in a phase where it is not allowed."""


class CheckpointError(FaptpError, RuntimeError):
    """Checkpoint/config version mismatch."""


class TrainingAbort(FaptpError, RuntimeError):
    """Training hit a non-recoverable state (e.g. NaN loss)."""

    def __init__(self, message, last_good_checkpoint=None):
        self.last_good_checkpoint = last_good_checkpoint
        if last_good_checkpoint is not None:
            message = f"{message} (last good checkpoint: {last_good_checkpoint})"
        super().__init__(message)
