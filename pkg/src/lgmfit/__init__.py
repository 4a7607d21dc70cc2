"""Approximate Bayesian inference for sparse latent Gaussian models."""

__version__ = "0.1.0"

from .errors import (
    DataError,
    FitError,
    LgmError,
    MissingEntry,
    ModelSpecError,
    NotPositiveDefinite,
)
from .fit import FitConfig, FitResult, RunReport, fit
from .model import build_model
from .modelspec import ComponentDecl, ModelDescription

__all__ = [
    "ComponentDecl",
    "DataError",
    "FitConfig",
    "FitError",
    "FitResult",
    "LgmError",
    "MissingEntry",
    "ModelDescription",
    "ModelSpecError",
    "NotPositiveDefinite",
    "RunReport",
    "build_model",
    "fit",
    "__version__",
]
