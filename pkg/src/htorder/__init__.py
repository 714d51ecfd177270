"""Conditional extreme value models with stochastic ordering constraints."""
from .constraints import ConstraintLevel, DFunction, keef_feasible, so_feasible, so_feasible_chain
from .dili import DiliPipeline, TrialData, chi_measures, conditional_spearman, median_regression
from .exceptions import (
    BootstrapUnstable,
    DomainError,
    FitDiverged,
    HTOrderError,
    InfeasibleStart,
    InsufficientData,
    NonFiniteStatistic,
    SchemaError,
    StudyUnstable,
    TooFewTailPoints,
    UnfittedDose,
)
from .extsim import ExactModelSpec, StudyConfig, run_rmse_study, simulate_exact
from .htcore import ExceedanceData, HeffernanTawn, HTFit, fit_unconstrained
from .inference import OrderingSpec, bootstrap_functional, fit_constrained, lrt_ordering
from .margins import SemiparametricMarginal, fit_marginal, from_laplace, to_laplace

__all__ = [
    "BootstrapUnstable", "ConstraintLevel", "DFunction", "DiliPipeline", "DomainError",
    "ExactModelSpec", "ExceedanceData", "FitDiverged", "HTFit", "HTOrderError",
    "HeffernanTawn", "InfeasibleStart", "InsufficientData", "NonFiniteStatistic",
    "OrderingSpec", "SchemaError", "SemiparametricMarginal", "StudyConfig", "StudyUnstable",
    "TooFewTailPoints", "TrialData", "UnfittedDose", "bootstrap_functional", "chi_measures",
    "conditional_spearman", "fit_constrained", "fit_marginal", "fit_unconstrained",
    "from_laplace", "keef_feasible", "lrt_ordering", "median_regression", "run_rmse_study",
    "simulate_exact", "so_feasible", "so_feasible_chain", "to_laplace",
]
