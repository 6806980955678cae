"""Exception types shared across the package.

Every error raised by library code derives from :class:`ItdtError` so callers
can catch the whole family. Input/schema problems and numerical failures are
kept distinct because the command line maps them to different exit codes.
"""

from __future__ import annotations


class ItdtError(Exception):
    """Base class for all package errors."""


class DataError(ItdtError):
    """Invalid input data or configuration (CLI exit code 2)."""


class NumericalError(ItdtError):
    """Numerical or model-level failure (CLI exit code 3)."""


# --- linear algebra ---------------------------------------------------------

class NotPositiveDefinite(NumericalError):
    def __init__(self, pivot: int, message: str | None = None):
        self.pivot = pivot
        super().__init__(message or f"matrix is not positive definite (pivot {pivot})")


class StillNotPositiveDefinite(NotPositiveDefinite):
    """Covariance remained indefinite after diagonal regularization."""


class DimensionMismatch(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class ConvergenceFailure(NumericalError):
    pass


# --- identification ---------------------------------------------------------

class InsufficientData(DataError):
    def __init__(self, needed: int, got: int, what: str = "samples"):
        self.needed = needed
        self.got = got
        super().__init__(f"insufficient data: need {needed} {what}, got {got}")


class DegenerateSpectrum(NumericalError):
    pass


class UnstableModel(NumericalError):
    def __init__(self, spectral_radius: float):
        self.spectral_radius = spectral_radius
        super().__init__(f"estimated dynamics unstable (spectral radius {spectral_radius:.6g})")


class NumericalFailure(NumericalError):
    pass


# --- filtering / detection --------------------------------------------------

class NoConvergence(NumericalError):
    def __init__(self, max_iter: int, last_residual: float):
        self.max_iter = max_iter
        self.last_residual = last_residual
        super().__init__(
            f"fixed-point iteration did not converge in {max_iter} steps "
            f"(last residual {last_residual:.3e})"
        )


class WindowNotFull(ItdtError):
    pass


# --- calibration / evaluation -----------------------------------------------

class EmptySet(DataError):
    pass


class InvalidIterations(DataError):
    pass


class InvalidArgument(DataError):
    pass


class LengthMismatch(DataError):
    pass


class InvalidK(DataError):
    pass


class AllZeroDifferences(DataError):
    pass


class TooFewPairs(DataError):
    pass


# --- simulation --------------------------------------------------------------

class InvalidMixing(DataError):
    pass


class InvalidStages(DataError):
    pass


# --- model files -------------------------------------------------------------

class ParseError(DataError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class VersionMismatch(DataError):
    def __init__(self, found: str, supported: str):
        self.found = found
        self.supported = supported
        super().__init__(f"unsupported model file version {found!r} (supported: {supported})")
