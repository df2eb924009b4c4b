"""Exception hierarchy shared by the library, the CLI and the job service.

The CLI maps :class:`ConfigError` to exit code 2 and every
:class:`NumericalError` to exit code 3.
"""


class QuasimError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QuasimError, ValueError):
    """Invalid input, malformed file or bad argument."""


class NumericalError(QuasimError, RuntimeError):
    """A computation could not be carried out."""


class CapacityError(NumericalError):
    """Qubit or ancilla cap exceeded."""


class ConvergenceError(NumericalError):
    """Iterative solver did not converge within its cap."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed (matrix not positive definite)."""


class StabilityError(NumericalError):
    """Explicit time step violates the stability bound."""


class DivergenceError(NumericalError):
    """Training loss or rollout values became non-finite or unbounded."""


class UnsupportedDegreeError(NumericalError):
    """A graph vertex has a degree the model has no submodel for."""

    def __init__(self, message, vertices=()):
        super().__init__(message)
        self.vertices = list(vertices)
