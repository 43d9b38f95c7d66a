"""Exception types raised across the package."""


class DomainError(ValueError):
    """A parametric coordinate lies outside the domain of a knot vector."""


class RefinementError(ValueError):
    """Knot insertion or element refinement was requested with invalid input."""


class NestingError(ValueError):
    """Two spline spaces that must be nested are not."""


class NumericalError(RuntimeError):
    """A linear solve or factorization failed or produced an inaccurate result."""
