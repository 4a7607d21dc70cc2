import numpy as np

from lgmfit.sparse.pattern import SparseSym


def random_spd(rng, n: int, density: float = 0.08) -> SparseSym:
    """Sparse strictly diagonally dominant symmetric matrix (hence SPD)."""
    nnz = max(int(density * n * (n - 1) / 2), 1)
    rows = rng.integers(1, n, size=nnz)
    cols = (rng.integers(0, rows)).astype(np.int64)
    vals = rng.normal(size=nnz)
    # duplicates merge in from_triplets; diagonal dominates the merged rows
    off = SparseSym.from_triplets(n, rows, cols, vals).to_dense()
    diag = np.abs(off).sum(axis=1) + rng.uniform(0.5, 1.5, size=n)
    full = off + np.diag(diag)
    return SparseSym.from_dense(full)


def backends():
    from lgmfit.sparse import kernels

    names = ["python"]
    if kernels.HAVE_COMPILED:
        names.append("compiled")
    return names
