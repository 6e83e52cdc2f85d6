"""Exception hierarchy shared by every module of the package."""


class FsdeaError(Exception):
    """Base class for all package errors."""


class SchemaError(FsdeaError):
    """A mandatory column is missing or a column has the wrong role."""


class ParseError(FsdeaError):
    """A cell could not be parsed; carries row/column coordinates."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DuplicateKeyError(FsdeaError):
    """A (unit, period) key appears more than once."""


class DegenerateColumnError(FsdeaError):
    """A column is constant and cannot be normalized."""


class SpecError(FsdeaError):
    """A network specification is inconsistent with itself or the data."""


class PositivityError(FsdeaError):
    """A DEA observation holds a zero or negative value."""


class SolverError(FsdeaError):
    """An LP did not reach optimality; ``status`` holds the solver status."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ConsistencyError(FsdeaError):
    """An internal identity (e.g. theta = sum w_p theta_p) failed."""


class EmptyResultError(FsdeaError):
    """An operation had nothing to operate on."""


class MalmquistDomainError(FsdeaError, ValueError):
    """A Malmquist input score is zero, negative or not finite."""


class EstimationError(FsdeaError):
    """Regression could not be estimated (collinearity, single cluster...)."""


class ConvergenceError(EstimationError):
    """Alternating-projection demeaning did not converge."""


class WeakRankError(EstimationError):
    """The instrument matrix is rank deficient."""


class UnsupportedScopeError(EstimationError):
    """Requested diagnostics outside the single-endogenous-regressor case."""


class SplitError(EstimationError):
    """A heterogeneity split produced an empty subsample."""


class ConfigError(FsdeaError):
    """Invalid run or DGP configuration."""
