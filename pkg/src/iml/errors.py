"""Exception hierarchy shared by every module of the package."""


class IMLError(Exception):
    """Base class for all package errors."""


class InputError(IMLError, ValueError):
    """Arguments violate a documented precondition."""


class ResolutionError(InputError):
    """A length scale is below what the lattice can resolve (e.g. eps < h)."""


class AdmissibilityError(InputError):
    """The (d, p) or (d, alpha, p) triple fails the intersection condition."""


class AccuracyError(IMLError, ArithmeticError):
    """A series or quadrature did not reach its requested tolerance."""


class ResourceError(IMLError):
    """A computation was refused because its cost exceeds the gate."""


class SolverError(IMLError):
    """An iterative solver failed to converge."""


class PreconditionError(IMLError):
    """A mathematical precondition for a bound is not met.

    The offending quantities are kept on ``report`` so callers can log them.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report if report is not None else {}
