"""Exception hierarchy shared across the package."""


class AsirkError(Exception):
    """Base class for all package-specific errors."""


class SchemeNotFoundError(AsirkError, KeyError):
    """Requested scheme name is not in the catalog."""


class SchemeValidationError(AsirkError, ValueError):
    """Coefficients violate a structural invariant (triangularity, zero diagonal, ...)."""


class SingularParameterError(AsirkError, ZeroDivisionError):
    """A scheme-family parameter hits a singular denominator."""


class SingularMatrixError(AsirkError):
    """A matrix that must be inverted is singular."""


class PoleError(AsirkError):
    """The stability function was evaluated at a pole."""


class StepFailureError(AsirkError):
    """A time step could not be completed."""


class NonConvergenceError(StepFailureError):
    """Inner stage solver exhausted its iteration budget."""

    def __init__(self, message, iterations, residual):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NumericalBlowupError(StepFailureError):
    """NaN or Inf appeared in the solution registers."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ReferenceUnreliableError(AsirkError):
    """Reference trajectory failed its self-consistency (Richardson) check."""


class DomainError(AsirkError, ValueError):
    """Problem data left the physically admissible domain."""


class ConfigError(AsirkError, ValueError):
    """Experiment configuration file violates the schema."""
