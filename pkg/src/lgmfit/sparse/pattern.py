"""Symmetric sparsity patterns and lower-triangle value storage.

A pattern is the undirected graph of a symmetric matrix: per-row sorted
adjacency (diagonal always present) in CSR-like arrays.  Values are attached
separately so one pattern can back many matrices (re-assembled per
hyperparameter point) and carry cached symbolic factorizations.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import LgmError

INDEX = np.int64


def _as_index(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a), dtype=INDEX)


class SparsePattern:
    """Undirected adjacency of a symmetric matrix, diagonal included.

    Parameters
    ----------
    n : int
        Matrix dimension.
    indptr, indices : arrays
        CSR layout of the full (both triangles) adjacency; each row's
        indices must be sorted, unique, and contain the row itself.
    """

    __slots__ = (
        "n", "indptr", "indices", "_lower", "_full_csr", "_symbolic_cache",
        "_lock", "__weakref__",
    )

    def __init__(self, n: int, indptr, indices, *, _checked: bool = False):
        self.n = int(n)
        self.indptr = _as_index(indptr)
        self.indices = _as_index(indices)
        self._lower: tuple[np.ndarray, np.ndarray] | None = None
        self._full_csr: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
        self._symbolic_cache: dict = {}
        self._lock = threading.Lock()
        if not _checked:
            self._validate()

    def _validate(self) -> None:
        n = self.n
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0:
            raise LgmError("malformed indptr")
        if self.indptr[-1] != self.indices.shape[0]:
            raise LgmError("indptr/indices length mismatch")
        if n == 0:
            return
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise LgmError("column index out of range")
        counts = np.diff(self.indptr)
        if (counts < 1).any():
            raise LgmError("every row must contain its diagonal entry")
        # sortedness + uniqueness within rows: strict increase except at row starts
        if n > 0:
            jumps = np.diff(idx)
            starts = self.indptr[1:-1]
            interior = np.ones(idx.size - 1, dtype=bool) if idx.size > 1 else np.zeros(0, dtype=bool)
            interior[starts - 1] = False
            if (jumps[interior] <= 0).any():
                raise LgmError("row indices must be sorted and unique")
        # diagonal present
        rows = np.repeat(np.arange(n, dtype=INDEX), counts)
        has_diag = np.zeros(n, dtype=bool)
        has_diag[rows[rows == idx]] = True
        if not has_diag.all():
            raise LgmError("every row must contain its diagonal entry")
        # symmetry: the set of (i,j) equals the set of (j,i)
        a = rows * n + idx
        b = idx * n + rows
        if not np.array_equal(np.sort(a), np.sort(b)):
            raise LgmError("pattern is not symmetric")

    @classmethod
    def from_entries(cls, n: int, rows, cols) -> "SparsePattern":
        """Build from arbitrary (row, col) entry lists.

        Symmetric closure and the full diagonal are added automatically;
        duplicates are dropped.
        """
        r = _as_index(rows)
        c = _as_index(cols)
        if r.shape != c.shape:
            raise LgmError("rows/cols length mismatch")
        if r.size and (min(r.min(), c.min()) < 0 or max(r.max(), c.max()) >= n):
            raise LgmError("entry index out of range")
        d = np.arange(n, dtype=INDEX)
        ri = np.concatenate([r, c, d])
        ci = np.concatenate([c, r, d])
        key = ri * INDEX(n) + ci
        key = np.unique(key)
        ri = key // n
        ci = key % n
        indptr = np.zeros(n + 1, dtype=INDEX)
        np.cumsum(np.bincount(ri, minlength=n), out=indptr[1:])
        return cls(n, indptr, ci, _checked=True)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def adjacency(self, i: int) -> np.ndarray:
        """Sorted neighbours of node i, including i."""
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def lower(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR arrays (indptr, indices) of the lower triangle incl. diagonal."""
        if self._lower is None:
            with self._lock:
                if self._lower is None:
                    n = self.n
                    counts = np.diff(self.indptr)
                    rows = np.repeat(np.arange(n, dtype=INDEX), counts)
                    keep = self.indices <= rows
                    li = self.indices[keep]
                    lr = rows[keep]
                    lptr = np.zeros(n + 1, dtype=INDEX)
                    np.cumsum(np.bincount(lr, minlength=n), out=lptr[1:])
                    self._lower = (lptr, li)
        return self._lower

    @property
    def lower_nnz(self) -> int:
        return int(self.lower()[1].shape[0])

    def full_csr_structure(self):
        """(indptr, indices, gather) of the full symmetric CSR layout, with
        `gather` mapping each stored entry to its lower-triangle value slot.
        Lets callers rebuild a scipy matrix per value set without re-sorting."""
        if self._full_csr is None:
            with self._lock:
                if self._full_csr is None:
                    n = self.n
                    lptr, li = self.lower()
                    rows = self.lower_entry_rows()
                    slots = np.arange(li.shape[0], dtype=INDEX)
                    off = rows != li
                    fr = np.concatenate([rows, li[off]])
                    fc = np.concatenate([li, rows[off]])
                    fs = np.concatenate([slots, slots[off]])
                    order = np.lexsort((fc, fr))
                    indptr = np.zeros(n + 1, dtype=INDEX)
                    np.cumsum(np.bincount(fr, minlength=n), out=indptr[1:])
                    self._full_csr = (indptr, fc[order], fs[order])
        return self._full_csr

    def lower_entry_rows(self) -> np.ndarray:
        lptr, li = self.lower()
        return np.repeat(np.arange(self.n, dtype=INDEX), np.diff(lptr))

    def __eq__(self, other) -> bool:
        return self is other

    def __hash__(self) -> int:
        return id(self)

    def __repr__(self) -> str:
        return f"SparsePattern(n={self.n}, nnz={self.nnz})"


def _dedupe_lower(n: int, rows, cols, vals):
    """Canonicalize triplets to the lower triangle, summing duplicates.

    The full diagonal is always materialized (explicit zeros if absent).
    """
    r = _as_index(rows)
    c = _as_index(cols)
    v = np.asarray(vals, dtype=np.float64)
    if not (r.shape == c.shape == v.shape):
        raise LgmError("triplet arrays must share a shape")
    if r.size and (min(r.min(), c.min()) < 0 or max(r.max(), c.max()) >= n):
        raise LgmError("entry index out of range")
    lo = np.minimum(r, c)
    hi = np.maximum(r, c)
    d = np.arange(n, dtype=INDEX)
    hi = np.concatenate([hi, d])
    lo = np.concatenate([lo, d])
    v = np.concatenate([v, np.zeros(n)])
    key = hi * INDEX(n) + lo
    uniq, inv = np.unique(key, return_inverse=True)
    out = np.bincount(inv, weights=v, minlength=uniq.size)
    return uniq // n, uniq % n, out


class SparseSym:
    """Symmetric sparse matrix: a shared pattern plus lower-triangle values.

    `values` is aligned with the row-major lower-triangle enumeration of
    `pattern` (``pattern.lower()``).
    """

    __slots__ = ("pattern", "values")

    def __init__(self, pattern: SparsePattern, values, *, validate: bool = True):
        self.pattern = pattern
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if validate:
            if self.values.shape != (pattern.lower_nnz,):
                raise LgmError(
                    f"need {pattern.lower_nnz} lower-triangle values, "
                    f"got {self.values.shape}"
                )
            if not np.isfinite(self.values).all():
                raise LgmError("matrix values must be finite")

    @classmethod
    def from_triplets(cls, n: int, rows, cols, vals) -> "SparseSym":
        """Assemble from (i, j, v) triplets; duplicates are summed.

        Either triangle may be given; entries are mirrored into the lower
        one and the diagonal is always stored.
        """
        r, c, v = _dedupe_lower(n, rows, cols, vals)
        pattern = SparsePattern.from_entries(n, r, c)
        lptr, li = pattern.lower()
        # triplets are sorted by (row, col) which is exactly the lower layout
        if not (np.array_equal(li, c) and r.size == li.size):
            raise LgmError("internal: lower layout mismatch")  # pragma: no cover
        return cls(pattern, v)

    @classmethod
    def from_dense(cls, a: np.ndarray, tol: float = 0.0) -> "SparseSym":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise LgmError("need a square matrix")
        if not np.allclose(a, a.T, atol=1e-12, rtol=1e-12):
            raise LgmError("matrix is not symmetric")
        r, c = np.nonzero(np.abs(np.tril(a)) > tol)
        return cls.from_triplets(a.shape[0], r, c, a[r, c])

    @property
    def n(self) -> int:
        return self.pattern.n

    def diagonal(self) -> np.ndarray:
        lptr, li = self.pattern.lower()
        rows = self.pattern.lower_entry_rows()
        out = np.zeros(self.n)
        mask = rows == li
        out[li[mask]] = self.values[mask]
        return out

    def to_scipy(self):
        """Full symmetric matrix as scipy CSR (both triangles)."""
        from scipy import sparse as sp

        lptr, li = self.pattern.lower()
        rows = self.pattern.lower_entry_rows()
        off = rows != li
        r = np.concatenate([rows, li[off]])
        c = np.concatenate([li, rows[off]])
        v = np.concatenate([self.values, self.values[off]])
        return sp.csr_array((v, (r, c)), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        lptr, li = self.pattern.lower()
        rows = self.pattern.lower_entry_rows()
        out = np.zeros((self.n, self.n))
        out[rows, li] = self.values
        out[li, rows] = self.values
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_scipy() @ x

    def __repr__(self) -> str:
        return f"SparseSym(n={self.n}, lower_nnz={self.values.size})"
