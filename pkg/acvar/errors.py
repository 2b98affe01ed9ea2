"""
Exception hierarchy for acvar.

Every error carries an HTTP status (used by the routes) and a CLI exit code.
"""


class LabError(Exception):
    """Base class; wraps a clean message and a status code."""
    exit_code = 1

    def __init__(self, message: str, status_code: int = 500):
        super().__init__(message)
        self.message = message
        self.status_code = status_code


class ChartDegeneracyError(LabError):
    """Chart derivatives have rank < N-1 at some parameter node."""
    def __init__(self, message: str):
        super().__init__(message, 422)


class OutOfTubeError(LabError):
    """Point lies outside the tubular neighbourhood where projection is unique."""
    def __init__(self, message: str):
        super().__init__(message, 422)


class ConvergenceError(LabError):
    """A Newton iteration did not converge."""
    def __init__(self, message: str):
        super().__init__(message, 422)


class InversionError(ConvergenceError):
    """Newton inversion of the flow map diverged (t outside the contraction regime)."""


class DomainError(LabError):
    """Argument outside the domain of an operation."""
    def __init__(self, message: str):
        super().__init__(message, 422)


class PropagationError(LabError):
    """Non-finite values reached a finite-difference oracle."""
    def __init__(self, message: str):
        super().__init__(message, 422)


class ConfigurationError(LabError):
    """Experiment configuration rejected before any computation."""
    exit_code = 2

    def __init__(self, message: str):
        super().__init__(message, 400)


class ReportError(LabError):
    """Report emission failed; message includes the path."""
    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}", 500)
        self.path = path
