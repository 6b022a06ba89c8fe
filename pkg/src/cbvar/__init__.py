"""Coarsened Bayesian vector autoregressions."""

__version__ = "0.1.0"

from cbvar.core import (
    CoarsenedPosterior,
    FitComplexity,
    LearningRate,
    NumericalError,
    VarDesign,
    build_design,
    coarsened_posterior,
    fit_complexity,
    learning_rate,
    log_marginal_likelihood,
)
from cbvar.dataio import Dataset, DataError, load_csv, recursive_windows
from cbvar.montecarlo import forecast, irf, sample_posterior, score_forecasts
from cbvar.priors import PriorSpec, apply_dummies, minnesota_prior, optimize_lambda
from cbvar.selection import evaluate_alpha_grid, fit_cbvar, select_alpha_knee

__all__ = [
    "CoarsenedPosterior",
    "DataError",
    "Dataset",
    "FitComplexity",
    "LearningRate",
    "NumericalError",
    "PriorSpec",
    "VarDesign",
    "apply_dummies",
    "build_design",
    "coarsened_posterior",
    "evaluate_alpha_grid",
    "fit_cbvar",
    "fit_complexity",
    "forecast",
    "irf",
    "learning_rate",
    "load_csv",
    "log_marginal_likelihood",
    "minnesota_prior",
    "optimize_lambda",
    "recursive_windows",
    "sample_posterior",
    "score_forecasts",
    "select_alpha_knee",
]
