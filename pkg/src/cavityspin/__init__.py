"""Exact and mean-field simulation of a driven collective spin with collective decay and exchange."""

from .errors import (
    CavitySpinError,
    FitError,
    InvalidParameterError,
    MemoryBudgetError,
    SingularParameterError,
    SolverError,
    StiffnessError,
    WrongBranchError,
)
from .params import CavityParams, ModelParams, derive_couplings, model_from_cavity

__version__ = "0.1.0"

__all__ = [
    "CavityParams",
    "CavitySpinError",
    "FitError",
    "InvalidParameterError",
    "MemoryBudgetError",
    "ModelParams",
    "SingularParameterError",
    "SolverError",
    "StiffnessError",
    "WrongBranchError",
    "derive_couplings",
    "model_from_cavity",
]
