"""Exception types shared across the package."""

from __future__ import annotations


class NoiseCovError(Exception):
    """Base class for all package-specific errors."""


class TickDataError(NoiseCovError):
    """Malformed tick data (CSV parse failures, duplicate or non-monotone ticks).

    Carries the offending line number when the source is a file.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyIntersectionError(NoiseCovError):
    """Two assets share no observation ticks, so no pairwise estimate exists."""


class EstimationError(NoiseCovError):
    """An estimate could not be produced (degenerate grid or window)."""


class IndefiniteMatrixError(NoiseCovError):
    """A matrix that must be positive semidefinite is not, beyond tolerance."""


class SamplingError(NoiseCovError):
    """Simulated sampling could not produce a valid panel."""


class SpectralNormError(NoiseCovError):
    """Power iteration failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class ExperimentError(NoiseCovError):
    """An experiment suite is invalid or clashes with existing outputs."""
