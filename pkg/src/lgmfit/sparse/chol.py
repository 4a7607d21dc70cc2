"""Sparse Cholesky factorization, solves, and the selected inverse.

Public entry points:

- ``factorize(Q, order="amd")`` -> CholFactor (raises NotPositiveDefinite)
- ``CholFactor.solve`` / ``solve_many``: Q x = b in the original ordering
- ``selected_inverse(factor)``: inverse entries on the factor pattern
- ``inverse_columns(factor, cols)``: dense columns of Q^{-1}

Symbolic analysis is cached on the pattern object, so re-factorizing a new
matrix with the same pattern (every hyperparameter point) skips straight to
the numeric kernel.
"""

from __future__ import annotations

import numpy as np

from ..errors import LgmError, NotPositiveDefinite
from . import kernels
from .pattern import INDEX, SparseSym
from .symbolic import Symbolic, build_symbolic, lookup_lower_positions

PIVOT_TOL = 1e-300


class CholFactor:
    """Numeric factor P Q P^T = L L^T plus its symbolic analysis."""

    __slots__ = ("symbolic", "Lx", "logdet", "_backend", "_selinv")

    def __init__(self, symbolic: Symbolic, Lx: np.ndarray, backend):
        self.symbolic = symbolic
        self.Lx = Lx
        self._backend = backend
        diag = Lx[symbolic.Lp[:-1]]
        self.logdet = float(2.0 * np.sum(np.log(diag)))
        self._selinv: SelectedInverse | None = None

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve Q x = b; `b` is in the original (unpermuted) ordering."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise LgmError("rhs length mismatch")
        s = self.symbolic
        x = np.ascontiguousarray(b[s.perm])
        self._backend.solve_lower(s.Lp, s.Li, self.Lx, x)
        self._backend.solve_upper(s.Lp, s.Li, self.Lx, x)
        out = np.empty_like(x)
        out[s.perm] = x
        return out

    def solve_many(self, B: np.ndarray) -> np.ndarray:
        """Columns of X with Q X = B (B is (n, k))."""
        B = np.asarray(B, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] != self.n:
            raise LgmError("rhs must be (n, k)")
        s = self.symbolic
        x = np.ascontiguousarray(B[s.perm])
        self._backend.solve_lower(s.Lp, s.Li, self.Lx, x)
        self._backend.solve_upper(s.Lp, s.Li, self.Lx, x)
        out = np.empty_like(x)
        out[s.perm] = x
        return out

    def factor_diag(self) -> np.ndarray:
        """Diagonal of L (permuted ordering)."""
        return self.Lx[self.symbolic.Lp[:-1]]


def factorize(Q: SparseSym, order="amd", *, symbolic: Symbolic | None = None,
              backend=None) -> CholFactor:
    """Cholesky-factorize a symmetric positive definite SparseSym."""
    sym = symbolic if symbolic is not None else build_symbolic(Q.pattern, order)
    if sym.n != Q.n:
        raise LgmError("symbolic/matrix dimension mismatch")
    kern = backend if backend is not None else kernels.get_backend()
    Ax = Q.values[sym.src]
    Lx = np.zeros(sym.nnz_factor)
    fail = kern.chol_numeric(sym.Ap, sym.Aj, Ax, sym.Rp, sym.Rj,
                             sym.Lp, sym.Li, Lx, PIVOT_TOL)
    if fail >= 0:
        raise NotPositiveDefinite(int(fail), float("nan"))
    return CholFactor(sym, Lx, kern)


class SelectedInverse:
    """Entries of Q^{-1} on the factor's sparsity pattern."""

    __slots__ = ("symbolic", "Cx")

    def __init__(self, symbolic: Symbolic, Cx: np.ndarray):
        self.symbolic = symbolic
        self.Cx = Cx

    @property
    def n(self) -> int:
        return self.symbolic.n

    def diagonal(self) -> np.ndarray:
        """Marginal variances diag(Q^{-1}) in the original ordering."""
        s = self.symbolic
        out = np.empty(s.n)
        out[s.perm] = self.Cx[s.Lp[:-1]]
        return out

    def entries(self, rows, cols) -> np.ndarray:
        """Q^{-1}[rows, cols] for entries inside the factor pattern
        (original indices; raises MissingEntry otherwise)."""
        s = self.symbolic
        pr = s.iperm[np.asarray(rows, dtype=INDEX)]
        pc = s.iperm[np.asarray(cols, dtype=INDEX)]
        pos = lookup_lower_positions(s.Lp, s.Li, pr, pc)
        return self.Cx[pos]


def selected_inverse(factor: CholFactor) -> SelectedInverse:
    """Takahashi recursion over the factor pattern; cached on the factor."""
    if factor._selinv is None:
        s = factor.symbolic
        tp, tidx = s.takahashi_tables()
        Cx = np.zeros(s.nnz_factor)
        factor._backend.takahashi(s.Lp, s.Li, factor.Lx, tp, tidx, Cx)
        factor._selinv = SelectedInverse(s, Cx)
    return factor._selinv


def inverse_columns(factor: CholFactor, cols) -> np.ndarray:
    """Dense columns of Q^{-1} (original ordering), shape (n, len(cols))."""
    cols = np.asarray(cols, dtype=INDEX)
    if cols.size and (cols.min() < 0 or cols.max() >= factor.n):
        raise LgmError("column index out of range")
    E = np.zeros((factor.n, cols.shape[0]))
    E[cols, np.arange(cols.shape[0])] = 1.0
    return factor.solve_many(E)
