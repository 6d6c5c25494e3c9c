"""Regression-learned localization for serial ensemble Kalman filters.

The package fits a linear map that turns a small ensemble's noisy sample
correlations into estimates of their large-ensemble limit, learned by
regression against an archived large "source" ensemble, and evaluates that
map inside a serial ensemble Kalman filter on the Lorenz-96 model against
tuned Gaspari-Cohn localization and a large-ensemble ETKF benchmark.
"""

from .diagnostics import DiagnosticsSeries, Summary, aggregate, rmse, spread
from .filters import FilterConfig, FilterRun, etkf_analysis, run_filter, serial_enkf_analysis
from .harness import ExperimentConfig, run_all
from .localization import LocalizationScheme, gaspari_cohn, load_scheme, save_scheme
from .model import ModelConfig, Trajectory, advance, nature_run
from .observations import NonlinearObsParams, ObservationOperator, generate_observations
from .stats import Ensemble, ZeroVarianceError, correlation_from_members, subsample
from .training import CorrelationTrainingSet, build_training_set, fit_diagonal, fit_map, tune_gc

__all__ = [
    "CorrelationTrainingSet",
    "DiagnosticsSeries",
    "Ensemble",
    "ExperimentConfig",
    "FilterConfig",
    "FilterRun",
    "LocalizationScheme",
    "ModelConfig",
    "NonlinearObsParams",
    "ObservationOperator",
    "Summary",
    "Trajectory",
    "ZeroVarianceError",
    "advance",
    "aggregate",
    "build_training_set",
    "correlation_from_members",
    "etkf_analysis",
    "fit_diagonal",
    "fit_map",
    "gaspari_cohn",
    "generate_observations",
    "load_scheme",
    "nature_run",
    "rmse",
    "run_all",
    "run_filter",
    "save_scheme",
    "serial_enkf_analysis",
    "spread",
    "subsample",
    "tune_gc",
]

__version__ = "0.1.0"
