"""VEC(1,1) multivariate GARCH estimation with Bregman (LogDet) barriers."""

from vecgarch.constraints import ConstraintConfig, FeasibilityReport, check, default_K
from vecgarch.errors import VecGarchError
from vecgarch.model import (
    Sample,
    VecParams,
    filter,
    grad_closed_form,
    grad_recursive,
    neg_loglik,
    parameter_count,
    simulate,
    stationary_variance,
)
from vecgarch.optimizer import LikelihoodObjective, OptimizerConfig, estimate
from vecgarch.prelim import default_constraint_config, preliminary_estimate

__version__ = "0.1.0"

__all__ = [
    "ConstraintConfig",
    "FeasibilityReport",
    "LikelihoodObjective",
    "OptimizerConfig",
    "Sample",
    "VecGarchError",
    "VecParams",
    "check",
    "default_K",
    "default_constraint_config",
    "estimate",
    "filter",
    "grad_closed_form",
    "grad_recursive",
    "neg_loglik",
    "parameter_count",
    "preliminary_estimate",
    "simulate",
    "stationary_variance",
]
