"""Exception hierarchy shared by all modules."""


class RoughStabError(Exception):
    """Base class for package errors."""


class DomainError(RoughStabError, ValueError):
    """A parameter lies outside the domain where an operation is defined."""


class KernelNotPSDError(RoughStabError, ArithmeticError):
    """Covariance Gram matrix is not positive definite, even after jitter."""


class DegenerateSpacingError(RoughStabError, ValueError):
    """A zero-length interval was met where a positive length is required."""


class StructuralError(RoughStabError, ValueError):
    """Inputs do not fit together (shapes, grids, missing data)."""


class DivergenceError(RoughStabError, ArithmeticError):
    """A numerical scheme blew up.

    Attributes
    ----------
    last_finite : int
        Index of the last grid point at which the state was finite and
        below the divergence threshold.
    """

    def __init__(self, message, last_finite):
        super().__init__(message)
        self.last_finite = last_finite
