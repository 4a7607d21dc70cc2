"""Fill-reducing orderings for symmetric patterns.

Plain minimum-degree on the quotient-free elimination graph: at each step
eliminate the minimum-degree node (ties broken by smallest index so results
are reproducible across runs and platforms), connect its neighbours into a
clique, repeat.  Degrees are tracked with a lazy heap; stale heap entries are
skipped on pop.  Quadratic worst case, fine at the target scales; the cost is
paid once per pattern and cached with the symbolic analysis.
"""

from __future__ import annotations

import heapq

import numpy as np

from ..errors import LgmError
from .pattern import INDEX, SparsePattern


def natural_order(n: int) -> np.ndarray:
    return np.arange(n, dtype=INDEX)


def min_degree(pattern: SparsePattern) -> np.ndarray:
    """Return perm with perm[k] = original index eliminated at step k."""
    n = pattern.n
    adj: list[set[int]] = [
        set(pattern.adjacency(i).tolist()) - {i} for i in range(n)
    ]
    heap: list[tuple[int, int]] = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    degree = [len(adj[i]) for i in range(n)]
    eliminated = np.zeros(n, dtype=bool)
    perm = np.empty(n, dtype=INDEX)
    for k in range(n):
        while True:
            if not heap:  # pragma: no cover - guarded by construction
                raise LgmError("ordering heap exhausted early")
            d, i = heapq.heappop(heap)
            if not eliminated[i] and d == degree[i]:
                break
        perm[k] = i
        eliminated[i] = True
        nbrs = adj[i]
        for j in nbrs:
            adj[j].discard(i)
        # clique the remaining neighbours
        for j in nbrs:
            new = nbrs - adj[j]
            new.discard(j)
            if new:
                adj[j] |= new
            degree[j] = len(adj[j])
            heapq.heappush(heap, (degree[j], j))
        adj[i] = set()
    return perm


def resolve_order(pattern: SparsePattern, order) -> np.ndarray:
    """Normalize an ordering request to a permutation array.

    `order` is "amd" (minimum degree), "natural", or an explicit permutation
    of range(n).
    """
    if isinstance(order, str):
        if order == "amd":
            return min_degree(pattern)
        if order == "natural":
            return natural_order(pattern.n)
        raise LgmError(f"unknown ordering {order!r}")
    perm = np.asarray(order, dtype=INDEX)
    if perm.shape != (pattern.n,) or not np.array_equal(
        np.sort(perm), np.arange(pattern.n, dtype=INDEX)
    ):
        raise LgmError("explicit order must be a permutation of range(n)")
    return perm


def inverse_permutation(p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)
    out[p] = np.arange(p.shape[0], dtype=p.dtype)
    return out
