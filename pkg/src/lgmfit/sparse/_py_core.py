"""Pure-python numeric kernels (numpy-vectorized inner updates).

Same contracts as the compiled module `_core`; used when the extension is
unavailable or explicitly selected.  All arrays are the symbolic layout
documented in `symbolic.Symbolic`; `Lx`/`Cx` are modified in place.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "python"


def chol_numeric(Ap, Aj, Ax, Rp, Rj, Lp, Li, Lx, pivot_tol: float) -> int:
    """Up-looking Cholesky; returns -1 on success, else the failing row."""
    n = Ap.shape[0] - 1
    x = np.zeros(n)
    c = Lp[:-1] + 1  # next free slot per column (diagonal sits at Lp[j])
    for k in range(n):
        a0, a1 = Ap[k], Ap[k + 1]
        x[Aj[a0:a1]] = Ax[a0:a1]
        d = x[k]
        x[k] = 0.0
        for t in range(Rp[k], Rp[k + 1]):
            j = Rj[t]
            xj = x[j]
            x[j] = 0.0
            lkj = xj / Lx[Lp[j]]
            p0 = Lp[j] + 1
            p1 = c[j]
            if p1 > p0:
                x[Li[p0:p1]] -= Lx[p0:p1] * lkj
            d -= lkj * lkj
            Lx[p1] = lkj
            c[j] = p1 + 1
        if not d > pivot_tol:
            return k
        Lx[Lp[k]] = math.sqrt(d)
    return -1


def solve_lower(Lp, Li, Lx, x) -> None:
    """x <- L^{-1} x (x 1-d or 2-d, permuted ordering)."""
    n = Lp.shape[0] - 1
    for j in range(n):
        p0, p1 = Lp[j], Lp[j + 1]
        xj = x[j] / Lx[p0]
        x[j] = xj
        if p1 > p0 + 1:
            idx = Li[p0 + 1:p1]
            if x.ndim == 1:
                x[idx] -= Lx[p0 + 1:p1] * xj
            else:
                x[idx] -= Lx[p0 + 1:p1, None] * xj


def solve_upper(Lp, Li, Lx, x) -> None:
    """x <- L^{-T} x."""
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        p0, p1 = Lp[j], Lp[j + 1]
        if p1 > p0 + 1:
            s = x[j] - Lx[p0 + 1:p1] @ x[Li[p0 + 1:p1]]
        else:
            s = x[j]
        x[j] = s / Lx[p0]


def takahashi(Lp, Li, Lx, Tp, Tidx, Cx) -> None:
    """Selected inverse over the factor pattern.

    Processes columns in descending order; within column i the off-diagonal
    entries depend only on inverse entries in columns > i (already final),
    so each column is one dense (s x s) @ (s,) product over the flattened
    position table."""
    n = Lp.shape[0] - 1
    for i in range(n - 1, -1, -1):
        p0, p1 = Lp[i], Lp[i + 1]
        s = p1 - p0 - 1
        lii = Lx[p0]
        if s == 0:
            Cx[p0] = 1.0 / (lii * lii)
            continue
        l = Lx[p0 + 1:p1] / lii
        tab = Tidx[Tp[i]:Tp[i + 1]].reshape(s, s)
        off = -(Cx[tab] @ l)
        Cx[p0 + 1:p1] = off
        Cx[p0] = 1.0 / (lii * lii) - l @ off
