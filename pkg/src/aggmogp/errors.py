"""Exception types shared across the package.

Geometry violations, numerical failures and data-file problems get their
own classes so callers (and the command line front end) can map them to
exit codes without string matching.
"""


class AggmogpError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(AggmogpError):
    """Invalid geometric configuration (domains, grids, supports)."""


class DegenerateInterval(GeometryError):
    """Interval with hi <= lo."""


class EmptySupport(GeometryError):
    """Support containing no grid points; the grid is too coarse for it."""


class EmptyPartition(GeometryError):
    """Partition with no supports."""


class OverlapError(GeometryError):
    """Two supports of the same partition overlap."""


class OutOfBounds(GeometryError):
    """Support reaching outside the domain extent or the grid index range."""


class DimensionMismatch(AggmogpError):
    """Operands with incompatible dimensionality."""


class LengthMismatch(AggmogpError):
    """Weight list whose length differs from the member point count."""


class CholeskyFailure(AggmogpError):
    """Covariance factorization failed even at the maximum jitter level."""


class NonFiniteELBO(AggmogpError):
    """Training aborted on a non-finite objective or gradient.

    Carries the iteration index at which the failure occurred.
    """

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite objective at iteration {iteration}")


class ZeroTruth(AggmogpError):
    """Percentage error requested against a zero ground-truth value.

    Carries the offending indices.
    """

    def __init__(self, indices, message=None):
        self.indices = tuple(int(i) for i in indices)
        super().__init__(
            message or f"zero ground-truth values at indices {list(self.indices)}"
        )


class CrossValidationError(AggmogpError):
    """A cross-validation fold failed; the cause names the fit error."""


class IncompatibleModel(AggmogpError):
    """Model file does not match the dataset or tooling it is used with."""


class DataError(AggmogpError):
    """Malformed dataset, config or model file."""
