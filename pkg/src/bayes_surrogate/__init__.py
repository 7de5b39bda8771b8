"""Bayesian parameter estimation of expensive simulators with a cascaded recurrent surrogate."""

__version__ = "0.1.0"

from .core import ObservedData, PriorSpec, MetricPair, log_likelihood, pearson, rmse
from .errors import SurrogateError
from .pipeline import ExperimentConfig, PipelineReport, kfold_cv, run_pipeline
from .sampler import NestedRunResult, NsConfig, nested_sampling, posterior_resample
from .simulators import make_observation, make_simulator, simulate_bivariate, simulate_multifeature
from .surrogate import (
    DrnSurrogate,
    TrainConfig,
    TrainingSet,
    drn_predict,
    drn_train,
    load_model,
    save_model,
    surrogate_loglike,
)

__all__ = [
    "DrnSurrogate", "ExperimentConfig", "MetricPair", "NestedRunResult", "NsConfig", "ObservedData",
    "PipelineReport", "PriorSpec", "SurrogateError", "TrainConfig", "TrainingSet", "drn_predict",
    "drn_train", "kfold_cv", "load_model", "log_likelihood", "make_observation", "make_simulator",
    "nested_sampling", "pearson", "posterior_resample", "rmse", "run_pipeline", "save_model",
    "simulate_bivariate", "simulate_multifeature", "surrogate_loglike",
]
