"""Multivariate nonlinear regression with MLPs and the log-determinant cost."""

__version__ = "0.1.0"

from .cost import CostKind, Dataset, cost_grad, cost_value, empirical_cov, logdet_hessian, residuals
from .model import MlpSpec, canonicalize, forward, jacobian, random_init
from .optim import FitReport, OptimOptions, bfgs_minimize, fgls_iterate, multistart_fit

__all__ = [
    "CostKind", "Dataset", "FitReport", "MlpSpec", "OptimOptions", "bfgs_minimize",
    "canonicalize", "cost_grad", "cost_value", "empirical_cov", "fgls_iterate", "forward",
    "jacobian", "logdet_hessian", "multistart_fit", "random_init", "residuals",
]
