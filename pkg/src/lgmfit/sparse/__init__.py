"""Sparse symmetric matrices, Cholesky factorization, selected inverse."""

from .chol import (
    CholFactor,
    SelectedInverse,
    factorize,
    inverse_columns,
    selected_inverse,
)
from .kernels import HAVE_COMPILED, get_backend
from .ordering import min_degree, natural_order
from .pattern import SparsePattern, SparseSym
from .symbolic import Symbolic, build_symbolic, lookup_lower_positions

__all__ = [
    "CholFactor",
    "SelectedInverse",
    "SparsePattern",
    "SparseSym",
    "Symbolic",
    "HAVE_COMPILED",
    "build_symbolic",
    "factorize",
    "get_backend",
    "inverse_columns",
    "lookup_lower_positions",
    "min_degree",
    "natural_order",
    "selected_inverse",
]
