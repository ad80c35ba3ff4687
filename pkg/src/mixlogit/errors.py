"""Exception hierarchy shared by all modules."""


class MixLogitError(Exception):
    """Base class for errors raised by the package."""


class SpecificationError(MixLogitError, ValueError):
    """Utility specification or dimension mismatch."""


class DataError(MixLogitError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(MixLogitError, ArithmeticError):
    """A numerical routine failed (e.g. factorization of a covariance)."""


class ChainAborted(MixLogitError):
    """Raised when a chain monitor fails; carries the partial results.

    Attributes
    ----------
    draws : RetainedDraws
        Draws retained before the failure.
    state : ChainState
        Chain state at the epoch the monitor failed.
    """

    def __init__(self, message, draws, state):
        super().__init__(message)
        self.draws = draws
        self.state = state
