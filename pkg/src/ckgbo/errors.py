"""Exception types raised across the package."""


class CkgError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CkgError, ValueError):
    """An argument has the wrong shape, range or type."""


class NumericDegeneracyError(CkgError, ArithmeticError):
    """A matrix factorization or variance computation broke down."""


class UnsupportedSmoothnessError(InvalidArgumentError):
    """The kernel is not smooth enough for the requested derivative."""


class DegenerateVarianceError(NumericDegeneracyError):
    """A predictive standard deviation is zero where a positive one is needed."""


class AcquisitionEstimationError(CkgError):
    """Too many Monte Carlo replications failed to produce a valid sample."""


class InfeasibleModelError(CkgError):
    """The current posterior has no feasible point on the inner search set."""


class OptimizerFailureError(CkgError):
    """Every chain of the outer optimizer produced non-finite values."""


class InfeasibleStartError(CkgError):
    """The initial design never produced a feasible posterior."""


class InfeasibleProblemError(CkgError):
    """A test problem has no feasible point on the oracle grid."""


class ConfigError(CkgError):
    """An experiment config failed validation.

    ``problems`` lists every issue found, each naming the offending field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NoDataError(CkgError):
    """A report was requested for a directory without completed runs."""
