"""Exception hierarchy.

Every error carries a stable class name; the CLI prints that name on stderr so
callers can match on it.
"""


class BayesDensError(Exception):
    """Base class for all package errors."""


class DomainError(BayesDensError, ValueError):
    """An argument is outside the domain of the operation."""


class ParseError(BayesDensError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class QuadratureError(BayesDensError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, estimate, error):
        super().__init__(f"{message} (estimate={estimate!r}, error bound={error!r})")
        self.estimate = estimate
        self.error = error


class DegeneratePosteriorError(BayesDensError):
    """Every lattice point carries zero posterior weight."""


class OutOfSupportError(DomainError):
    pass


class SingularStartDensityError(DomainError):
    """A start (prior guess) density vanishes where it must be positive."""


class ControlBoundaryError(DomainError):
    """Evaluation point lies exactly on a control-set boundary."""


class BoundaryModeError(BayesDensError):
    """The posterior mode sits on the boundary of the simplex."""


class ConvergenceError(BayesDensError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class BoundaryMLEError(ConvergenceError):
    """Moment equations have no interior solution."""


class UnreliablePosteriorError(BayesDensError):
    """Importance sampling produced too small an effective sample size."""

    def __init__(self, message, ess=None):
        super().__init__(message)
        self.ess = ess


class NoLocalDataError(BayesDensError):
    """The kernel window around x contains no data."""
