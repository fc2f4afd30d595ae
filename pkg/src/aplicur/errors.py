"""Exception hierarchy shared by all solver components."""


class AplicurError(Exception):
    """Base class for every error raised by this package."""


class InvalidIndexError(AplicurError, IndexError):
    """Out-of-range or duplicate index passed to a submatrix extraction."""


class ShapeError(AplicurError, ValueError):
    """Operands with incompatible dimensions."""


class RankDeficientError(AplicurError, ArithmeticError):
    """A factorization met a (numerically) dependent column.

    Attributes
    ----------
    column : int
        Zero-based position of the first deficient column.
    """

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class NotPositiveDefiniteError(AplicurError, ArithmeticError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class SingularMatrixError(AplicurError, ArithmeticError):
    """A triangular or intersection matrix is (numerically) singular."""


class ConvergenceError(AplicurError, ArithmeticError):
    """An iterative kernel failed to converge within its iteration cap."""


class BreakdownError(AplicurError, ArithmeticError):
    """NaN or Inf appeared inside the LSQR recurrences.

    The partial trace collected up to the failure is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NotApplicableError(AplicurError, ValueError):
    """A theoretical bound was evaluated outside its hypotheses."""


class ConfigError(AplicurError, ValueError):
    """Invalid solver or experiment configuration."""


class ProblemTooLargeError(AplicurError, ValueError):
    """A dense oracle was requested for a problem above the desk-scale limit."""
