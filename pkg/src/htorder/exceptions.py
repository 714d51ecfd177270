"""Exception and warning types raised across the package."""


class HTOrderError(Exception):
    """Base class for all package errors."""


class DomainError(HTOrderError, ValueError):
    """An argument lies outside the domain of the operation."""


class InsufficientData(HTOrderError, ValueError):
    """Too few observations to carry out a fit."""


class FitDiverged(HTOrderError, RuntimeError):
    """No start of a multi-start optimisation produced a finite optimum."""


class InfeasibleStart(HTOrderError, RuntimeError):
    """No parameter vector satisfying the constraints could be located."""


class NonFiniteStatistic(HTOrderError, RuntimeError):
    """A likelihood-ratio statistic could not be evaluated."""


class BootstrapUnstable(HTOrderError, RuntimeError):
    """Too many bootstrap replicates failed to refit."""


class StudyUnstable(HTOrderError, RuntimeError):
    """Too many Monte Carlo replicates failed."""


class TooFewTailPoints(HTOrderError, ValueError):
    """The requested tail region holds too few joint observations."""


class UnfittedDose(HTOrderError, KeyError):
    """A prediction was requested for a dose group that was not fitted."""


class SchemaError(HTOrderError, ValueError):
    """Input table does not follow the expected column layout."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class DegenerateResidualsWarning(UserWarning):
    """Fitted residuals have (numerically) zero spread."""
