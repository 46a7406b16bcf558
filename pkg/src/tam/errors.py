"""Exception types raised by the library."""


class TamError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(TamError, ValueError):
    """A parameter is outside its admissible range."""


class InvalidInputError(TamError, ValueError):
    """An input array violates a stated precondition (e.g. orthonormality)."""


class InconsistencyError(TamError, ValueError):
    """Observed values do not match the edge set they are attached to."""


class InvalidSubspaceError(TamError, ValueError):
    """A basis passed to the subspace distance is rank deficient."""


class OutOfRangeError(TamError, ValueError):
    """A derived quantity left the range where its formula is defined."""


class SamplingFailureError(TamError, RuntimeError):
    """Random graph generation exhausted its retry budget."""


class ConvergenceError(TamError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    ``best`` holds the last iterate so callers can inspect or reuse it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateTruncationError(TamError, ArithmeticError):
    """Row truncation produced a rank-deficient factor."""


class InternalInvariantError(TamError, RuntimeError):
    """A condition guaranteed by construction was violated."""
