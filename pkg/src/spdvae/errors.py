"""Exception hierarchy shared across the package."""


class SpdVaeError(Exception):
    """Base class for all package errors."""


class InvalidInput(SpdVaeError, ValueError):
    """Raised when arguments violate an operation's preconditions."""


class NumericalFailure(SpdVaeError, ArithmeticError):
    """Raised when a computation produces non-finite or out-of-domain values."""


class NonConvergence(SpdVaeError, RuntimeError):
    """Raised when an iterative solver exhausts its budget.

    Attributes
    ----------
    residual : float
        Value of the stopping criterion at the last iterate.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class DegenerateTest(SpdVaeError, ValueError):
    """Raised when a statistical test is undefined for the given sample."""
