"""
Exception hierarchy for LindbladQOC.
The CLI maps each branch to a process exit code.
"""


class QocError(Exception):
    """Base exception for all LindbladQOC failures."""
    pass


class ConfigError(QocError, ValueError):
    """Raised when a run configuration is malformed or inconsistent."""
    pass


class ConfigFileNotFoundError(ConfigError, FileNotFoundError):
    """Raised when a configuration references a file that does not exist."""
    pass


class DimensionError(QocError, ValueError):
    """Raised when operator and state dimensions do not match."""
    pass


class NumericalError(QocError):
    """Base class for failures of the numerical machinery."""
    pass


class DiagonalizationError(NumericalError):
    """Raised when an eigenproblem fails or is degenerate."""
    pass


class StiffnessError(NumericalError):
    """Raised when the adaptive step size falls below the minimum step."""
    pass


class ReverseDivergenceError(NumericalError):
    """Raised when reverse-time replay of the master equation blows up."""
    pass


class CostError(NumericalError):
    """Raised when a cost function cannot be evaluated."""
    pass


class SnrFitError(NumericalError):
    """Raised when the SNR model fit is degenerate."""
    pass


class CalibrationError(NumericalError):
    """Raised when a calibration sweep is degenerate or misses the resonance."""
    pass


class OptimizationError(NumericalError):
    """Raised when the optimizer cannot proceed. Carries the failing epoch."""

    def __init__(self, message: str, epoch: int = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch
        self.detail = message


class ValidationCapError(QocError):
    """Raised when a validation run would exceed the configured memory cap."""

    def __init__(self, estimate_bytes: int, cap_bytes: int):
        super().__init__(
            f"Validation needs ~{estimate_bytes / 1024 ** 2:.1f} MiB, "
            f"above the cap of {cap_bytes / 1024 ** 2:.1f} MiB."
        )
        self.estimate_bytes = estimate_bytes
        self.cap_bytes = cap_bytes


class OutputError(QocError):
    """Raised when a run artifact cannot be written."""
    pass
