"""Principal component estimation of large approximate factor models."""
from .constraints import ConstrainedFit, RestrictionSet, constrained_fit, lambda_update_exact
from .errors import FactorKitError, LinearSolveError, ValidationError
from .estimators import (
    CommonComponent,
    FactorFit,
    algorithm_rpc,
    apc,
    common_component,
    pc,
    rpc_closed_form,
    rpc_general,
)
from .imputation import ImputationResult, em_impute
from .panel import Panel, ScaledData, StandardizationInfo, ingest_csv, prepare, scale, standardize
from .selection import SelectionResult, select
from .svdcore import PartialSvd, soft_threshold, svt, top_k_svd

__version__ = "0.1.0"

__all__ = [
    "CommonComponent",
    "ConstrainedFit",
    "FactorFit",
    "FactorKitError",
    "ImputationResult",
    "LinearSolveError",
    "Panel",
    "PartialSvd",
    "RestrictionSet",
    "ScaledData",
    "SelectionResult",
    "StandardizationInfo",
    "ValidationError",
    "algorithm_rpc",
    "apc",
    "common_component",
    "constrained_fit",
    "em_impute",
    "ingest_csv",
    "lambda_update_exact",
    "pc",
    "prepare",
    "rpc_closed_form",
    "rpc_general",
    "scale",
    "select",
    "soft_threshold",
    "standardize",
    "svt",
    "top_k_svd",
]
