"""Heterogeneous-coefficient conditional logit toolkit.

Estimates intercept and slope functions of observed socio-demographics
with a structured feedforward network, performs second-stage inference
through an orthogonal influence function with repeated sample
splitting, and ships the Monte Carlo and application drivers that
exercise both.
"""

from .choice_core import (
    CoefficientBundle,
    choice_probabilities,
    hessian_target,
    log_likelihood,
    pack_upper,
    score,
    unpack_upper,
)
from .data import ChoiceDataset, Observation
from .influence_engine import (
    AverageCoefficient,
    EstimateConfig,
    EstimateResult,
    SplitPlan,
    TargetFunctional,
    ThetaEstimate,
    TravelTimeElasticity,
    estimate,
    estimate_repeated,
    make_split_plan,
    psi_value,
)
from .nn_core import NetworkParams, NetworkSpec, fit, forward, init_network
from .nuisance_lambda import LambdaModel, fit_lambda, mse_lambda, predict_lambda_inverse
from .structured_estimator import DeltaModel, fit_delta, predict_delta

__version__ = "0.1.0"

__all__ = [
    "AverageCoefficient",
    "ChoiceDataset",
    "CoefficientBundle",
    "DeltaModel",
    "EstimateConfig",
    "EstimateResult",
    "LambdaModel",
    "NetworkParams",
    "NetworkSpec",
    "Observation",
    "SplitPlan",
    "TargetFunctional",
    "ThetaEstimate",
    "TravelTimeElasticity",
    "choice_probabilities",
    "estimate",
    "estimate_repeated",
    "fit",
    "fit_delta",
    "fit_lambda",
    "forward",
    "hessian_target",
    "init_network",
    "log_likelihood",
    "make_split_plan",
    "mse_lambda",
    "pack_upper",
    "predict_delta",
    "predict_lambda_inverse",
    "psi_value",
    "score",
    "unpack_upper",
]
