"""Exception and warning types raised by changeframe."""


class ChangeFrameError(Exception):
    """Base class for all changeframe errors."""


class DomainError(ChangeFrameError, ValueError):
    """An argument lies outside the domain of a function (e.g. t < 0)."""


class InvalidParameterError(ChangeFrameError, ValueError):
    """A model parameter vector violates its family's constraints."""


class SingularityError(DomainError):
    """The derivative is unbounded at the requested time point."""


class DataError(ChangeFrameError, ValueError):
    """Malformed or unusable input data."""


class DegenerateDataError(DataError):
    """Input carries no information about the curve (e.g. constant responses)."""


class NoChangeDetectedError(DataError):
    """An operation needs a detected change period but none was found."""


class NumericalError(ChangeFrameError, RuntimeError):
    """Base class for failures of a numerical procedure."""


class NonConvergenceError(NumericalError):
    """No optimizer start converged."""


class RefitFailureError(NumericalError):
    """Too many bootstrap refits failed."""


class InsufficientSamplesError(NumericalError):
    """Too few valid bootstrap samples remain to form a quantile."""


class DegenerateDataWarning(RuntimeWarning):
    """Fit succeeded on data with zero residual variation."""
