"""Zero-inflated negative binomial ARMA models for count time series."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    CovariateRecipe,
    Dataset,
    EstimatorOptions,
    ModelError,
    ModelSpec,
    ParameterSet,
    ZinbDistribution,
    build_design,
    compute_states,
)
from .estimation import FitResult, fit, fit_em, fit_newton_raphson  # noqa: E402
from .simulation import McStudyConfig, run_mc_study, simulate_dataset, simulate_series  # noqa: E402

__all__ = [
    "CovariateRecipe", "Dataset", "EstimatorOptions", "ModelError", "ModelSpec", "ParameterSet",
    "ZinbDistribution", "build_design", "compute_states", "FitResult", "fit", "fit_em",
    "fit_newton_raphson", "McStudyConfig", "run_mc_study", "simulate_dataset", "simulate_series",
]
