"""Spatial-temporal Gaussian process regression with a decoupled Kalman filter."""

from .errors import ConfigError, InputError, NumericalError, StgpError, ToleranceError
from .hyper import CostReport, HyperParams, Param, cost_pass, finite_diff_check, gcv_sure_costs, mlm_cost, optimize
from .kalman import filter_pass, posterior, predictor_pass, smoother_pass
from .kernels import Family, SpatialKernelSpec, TemporalKernelSpec, eval_spatial_gram, eval_temporal_gram
from .oracle import DenseProblem, dense_delta_S, dense_mlm, dense_posterior
from .realize import Realization, realize
from .stmodel import TransformedModel, build_transformed_model, transform_outputs

__all__ = [
    "ConfigError", "InputError", "NumericalError", "StgpError", "ToleranceError",
    "CostReport", "HyperParams", "Param", "cost_pass", "finite_diff_check", "gcv_sure_costs", "mlm_cost", "optimize",
    "filter_pass", "posterior", "predictor_pass", "smoother_pass",
    "Family", "SpatialKernelSpec", "TemporalKernelSpec", "eval_spatial_gram", "eval_temporal_gram",
    "DenseProblem", "dense_delta_S", "dense_mlm", "dense_posterior",
    "Realization", "realize",
    "TransformedModel", "build_transformed_model", "transform_outputs",
]
