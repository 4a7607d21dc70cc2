"""Symbolic Cholesky analysis, cached per (pattern, ordering).

Everything here depends only on the sparsity pattern and the permutation:
the permuted lower layout with its value gather map, the elimination tree,
the per-row patterns of the factor (ascending, as consumed by the up-looking
numeric kernel), the column-compressed factor layout, and the flattened
index tables used by the selected-inverse recursion.  Numeric factorizations
re-use one Symbolic across hyperparameter points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import LgmError, MissingEntry
from .ordering import inverse_permutation, resolve_order
from .pattern import INDEX, SparsePattern


@dataclass
class Symbolic:
    n: int
    perm: np.ndarray            # perm[k] = original index at permuted slot k
    iperm: np.ndarray
    Ap: np.ndarray              # permuted lower CSR of the input pattern
    Aj: np.ndarray
    src: np.ndarray             # permuted lower values = orig lower values[src]
    parent: np.ndarray          # elimination tree
    Rp: np.ndarray              # strictly-lower row patterns of L, ascending
    Rj: np.ndarray
    Lp: np.ndarray              # columns of L; diagonal first, rows ascending
    Li: np.ndarray
    _tak: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def nnz_factor(self) -> int:
        return int(self.Li.shape[0])

    def permute_values(self, lower_values: np.ndarray) -> np.ndarray:
        return lower_values[self.src]

    # -- selected-inverse index tables ------------------------------------
    def takahashi_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened s_i x s_i position tables for the inverse recursion.

        For column i with strictly-lower rows k_1..k_s, table entry (u, t)
        is the value slot of the inverse entry at (row k_t, col k_u) taken
        in canonical lower orientation.  All those entries exist in the
        factor pattern because the rows of a column form a clique in the
        filled graph.
        """
        if self._tak is None:
            n = self.n
            Lp, Li = self.Lp, self.Li
            sizes = np.diff(Lp) - 1
            tp = np.zeros(n + 1, dtype=INDEX)
            np.cumsum(sizes * sizes, out=tp[1:])
            rows_all = []
            cols_all = []
            for i in range(n):
                s = int(sizes[i])
                if s == 0:
                    continue
                r = Li[Lp[i] + 1:Lp[i + 1]]
                rows_all.append(np.broadcast_to(r, (s, s)).T.ravel())
                cols_all.append(np.broadcast_to(r, (s, s)).ravel())
            if rows_all:
                rq = np.concatenate(rows_all)
                cq = np.concatenate(cols_all)
                tidx = lookup_lower_positions(Lp, Li, rq, cq)
            else:
                tidx = np.zeros(0, dtype=INDEX)
            self._tak = (tp, tidx)
        return self._tak


def lookup_lower_positions(Lp, Li, rows, cols) -> np.ndarray:
    """Value slots of entries (rows[i], cols[i]) in a column-compressed
    lower layout, orientation-insensitive.  Raises MissingEntry if any
    query falls outside the pattern."""
    lo = np.minimum(rows, cols)   # column in canonical lower orientation
    hi = np.maximum(rows, cols)   # row
    out = np.empty(hi.shape[0], dtype=INDEX)
    order = np.argsort(lo, kind="stable")
    lo_s = lo[order]
    hi_s = hi[order]
    uniq, first = np.unique(lo_s, return_index=True)
    first = np.append(first, lo_s.shape[0])
    for u in range(uniq.shape[0]):
        col = int(uniq[u])
        a, b = first[u], first[u + 1]
        seg = Li[Lp[col]:Lp[col + 1]]
        pos = np.searchsorted(seg, hi_s[a:b])
        bad = (pos >= seg.shape[0])
        pos = np.minimum(pos, seg.shape[0] - 1)
        if bad.any() or (seg[pos] != hi_s[a:b]).any():
            raise MissingEntry("entry outside the factor pattern")
        out[order[a:b]] = Lp[col] + pos
    return out


def build_symbolic(pattern: SparsePattern, order="amd") -> Symbolic:
    """Analyse `pattern` under `order`; results are cached on the pattern."""
    key = order if isinstance(order, str) else ("explicit", bytes(np.asarray(order, dtype=INDEX)))
    cache = pattern._symbolic_cache
    hit = cache.get(key)
    if hit is not None:
        return hit
    with pattern._lock:
        hit = cache.get(key)
        if hit is not None:
            return hit
        sym = _analyse(pattern, resolve_order(pattern, order))
        cache[key] = sym
        return sym


def _analyse(pattern: SparsePattern, perm: np.ndarray) -> Symbolic:
    n = pattern.n
    iperm = inverse_permutation(perm)

    # permuted lower input layout + gather map from original lower values
    lptr, li = pattern.lower()
    orig_rows = pattern.lower_entry_rows()
    pr = iperm[orig_rows]
    pc = iperm[li]
    hi = np.maximum(pr, pc)
    lo = np.minimum(pr, pc)
    order_idx = np.lexsort((lo, hi))
    Ap = np.zeros(n + 1, dtype=INDEX)
    np.cumsum(np.bincount(hi, minlength=n), out=Ap[1:])
    Aj = lo[order_idx]
    src = np.arange(li.shape[0], dtype=INDEX)[order_idx]

    # one pass: elimination tree + ascending row patterns of L
    parent = np.full(n, -1, dtype=INDEX)
    w = np.full(n, -1, dtype=INDEX)
    Rp = np.zeros(n + 1, dtype=INDEX)
    rowpat: list[int] = []
    parent_l = parent
    for k in range(n):
        w[k] = k
        seg = Aj[Ap[k]:Ap[k + 1]]
        start = len(rowpat)
        for c in seg.tolist():
            j = c
            while w[j] != k:
                w[j] = k
                rowpat.append(j)
                if parent_l[j] == -1:
                    parent_l[j] = k
                j = parent_l[j]
        if len(rowpat) > start:
            rowpat[start:] = sorted(rowpat[start:])
        Rp[k + 1] = len(rowpat)
    Rj = np.asarray(rowpat, dtype=INDEX)

    # column layout of L: diagonal first, then rows ascending
    strict_counts = np.bincount(Rj, minlength=n) if Rj.size else np.zeros(n, dtype=INDEX)
    Lp = np.zeros(n + 1, dtype=INDEX)
    np.cumsum(strict_counts + 1, out=Lp[1:])
    nnz = int(Lp[-1])
    Li = np.empty(nnz, dtype=INDEX)
    Li[Lp[:-1]] = np.arange(n, dtype=INDEX)
    if Rj.size:
        rows_of = np.repeat(np.arange(n, dtype=INDEX), np.diff(Rp))
        by_col = np.argsort(Rj, kind="stable")  # within a column, k ascends
        cols_sorted = Rj[by_col]
        offsets = np.arange(cols_sorted.shape[0], dtype=INDEX) - np.concatenate(
            ([0], np.cumsum(np.bincount(cols_sorted, minlength=n))[:-1])
        )[cols_sorted]
        Li[Lp[cols_sorted] + 1 + offsets] = rows_of[by_col]

    return Symbolic(
        n=n, perm=perm, iperm=iperm, Ap=Ap, Aj=Aj, src=src,
        parent=parent, Rp=Rp, Rj=Rj, Lp=Lp, Li=Li,
    )
