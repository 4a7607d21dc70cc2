"""Latent Gaussian model assembly.

Builds the latent layout, the prior precision Q(theta), and the sparse
design matrix A linking linear predictors to the latent field.  The latent
field holds only model components (fixed effects + smoothers); predictors
are never part of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse as sp
from scipy.special import gammaln

from .errors import (
    EmptyComponent,
    LgmError,
    NonFiniteCovariate,
    UnknownColumn,
)
from .sparse.pattern import INDEX, SparsePattern, SparseSym

FIXED_PREC_DEFAULT = 1e-3
HYPER_SHAPE_DEFAULT = 1.0
HYPER_RATE_DEFAULT = 5e-5
RW_JITTER = 1e-5
SUM_TO_ZERO_PREC = 1e6
SCALING_SIZE_CAP = 2000

FIXED_KINDS = ("intercept", "linear")
RANDOM_KINDS = ("iid", "rw1", "rw2")


@dataclass(frozen=True)
class HyperParam:
    """One log-precision coordinate of theta with its Gamma prior."""

    name: str
    shape: float = HYPER_SHAPE_DEFAULT
    rate: float = HYPER_RATE_DEFAULT

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise LgmError("gamma prior needs shape > 0 and rate > 0")


@dataclass
class ComponentSpec:
    """Structural record of one latent component."""

    kind: str
    name: str
    size: int
    hyper: int | None = None        # index into LatentModel.hypers
    fixed_prec: float | None = None  # fixed-effect kinds only
    weight: float = 1.0
    scaled: bool = False
    constrained: bool = False
    scale_factor: float = 1.0       # generalized-variance factor (rw kinds)
    labels: np.ndarray | None = None  # level values backing iid columns

    def __post_init__(self):
        if self.size < 1:
            raise EmptyComponent(f"component {self.name!r} has size {self.size}")
        if self.kind == "rw1" and self.size < 2:
            raise LgmError("rw1 needs size >= 2")
        if self.kind == "rw2" and self.size < 3:
            raise LgmError("rw2 needs size >= 3")
        if self.kind not in FIXED_KINDS + RANDOM_KINDS:
            raise LgmError(f"unknown component kind {self.kind!r}")


class LatentModel:
    """Ordered components with their latent index ranges and hyper layout."""

    def __init__(self, components: list[ComponentSpec], hypers: list[HyperParam]):
        self.components = list(components)
        self.hypers = list(hypers)
        sizes = [c.size for c in self.components]
        offsets = np.concatenate(([0], np.cumsum(sizes))).astype(int)
        self.m = int(offsets[-1])
        self.slices = [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:])]
        for c in self.components:
            if c.hyper is not None and not (0 <= c.hyper < len(hypers)):
                raise LgmError("component references a missing hyperparameter")
        self._plan: _PrecisionPlan | None = None

    @property
    def q(self) -> int:
        return len(self.hypers)

    def index_range(self, i: int) -> slice:
        return self.slices[i]

    def fixed_effect_indices(self) -> np.ndarray:
        idx = [np.arange(s.start, s.stop) for c, s in zip(self.components, self.slices)
               if c.kind in FIXED_KINDS]
        if not idx:
            return np.zeros(0, dtype=int)
        return np.concatenate(idx)

    def latent_names(self) -> list[str]:
        out = []
        for c, s in zip(self.components, self.slices):
            if c.size == 1:
                out.append(c.name)
            elif c.labels is not None:
                out.extend(f"{c.name}[{lab}]" for lab in c.labels)
            else:
                out.extend(f"{c.name}[{k}]" for k in range(c.size))
        return out

    # -- prior precision ---------------------------------------------------
    def _precision_plan(self) -> "_PrecisionPlan":
        if self._plan is None:
            self._plan = _PrecisionPlan(self)
        return self._plan

    def prior_precision(self, theta) -> SparseSym:
        """Block-diagonal Q(theta) over the latent field."""
        return self._precision_plan().instance(np.asarray(theta, dtype=float)).sym

    def prior_instance(self, theta) -> "PrecisionInstance":
        return self._precision_plan().instance(np.asarray(theta, dtype=float))

    def theta_log_prior(self, theta) -> float:
        """Log density of theta: Gamma(a, r) on each precision + log-Jacobian."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.hypers),):
            raise LgmError("theta length mismatch")
        if not np.isfinite(theta).all():
            raise LgmError("theta must be finite")
        total = 0.0
        for t, h in zip(theta, self.hypers):
            total += (h.shape * np.log(h.rate) - gammaln(h.shape)
                      + h.shape * t - h.rate * np.exp(t))
        return float(total)

    def __repr__(self) -> str:
        kinds = ",".join(c.kind for c in self.components)
        return f"LatentModel(m={self.m}, q={self.q}, components=[{kinds}])"


@dataclass
class PrecisionInstance:
    """Q(theta) in both consumable forms, assembled once per theta."""

    sym: SparseSym
    full: sp.csr_array
    logdet_cached: float | None = None

    def quad(self, x: np.ndarray) -> float:
        return float(x @ (self.full @ x))

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.full @ x


def rw_structure(order: int, size: int) -> sp.csr_array:
    """Structure matrix R = D^T D of a random walk of the given order."""
    if order == 1:
        D = sp.diags_array([-np.ones(size - 1), np.ones(size - 1)],
                           offsets=[0, 1], shape=(size - 1, size))
    elif order == 2:
        ones = np.ones(size - 2)
        D = sp.diags_array([ones, -2 * ones, ones], offsets=[0, 1, 2],
                           shape=(size - 2, size))
    else:
        raise LgmError("walk order must be 1 or 2")
    return (D.T @ D).tocsr()


def rw_scale_factor(order: int, size: int) -> float:
    """Geometric mean of the marginal variances of the intrinsic prior at
    unit precision, from the eigendecomposition of the structure matrix."""
    if size > SCALING_SIZE_CAP:
        raise LgmError(f"scaled walk size {size} exceeds cap {SCALING_SIZE_CAP}")
    R = rw_structure(order, size).toarray()
    lam, V = np.linalg.eigh(R)
    keep = lam > lam[-1] * 1e-10
    diag = ((V[:, keep] ** 2) / lam[keep]).sum(axis=1)
    return float(np.exp(np.mean(np.log(diag))))


class _PrecisionPlan:
    """Precomputed triplet layout so per-theta assembly is two bincounts."""

    def __init__(self, model: LatentModel):
        m = model.m
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        base: list[np.ndarray] = []
        hyp: list[np.ndarray] = []

        def add(r, c, v, h):
            r = np.asarray(r, dtype=INDEX)
            rows.append(r)
            cols.append(np.asarray(c, dtype=INDEX))
            base.append(np.asarray(v, dtype=float))
            hyp.append(np.full(r.shape[0], h, dtype=INDEX))

        for comp, sl in zip(model.components, model.slices):
            idx = np.arange(sl.start, sl.stop, dtype=INDEX)
            if comp.kind in FIXED_KINDS:
                prec = FIXED_PREC_DEFAULT if comp.fixed_prec is None else comp.fixed_prec
                add(idx, idx, np.full(comp.size, prec), -1)
                continue
            if comp.kind == "iid":
                add(idx, idx, np.ones(comp.size), comp.hyper)
            else:
                order = 1 if comp.kind == "rw1" else 2
                R = rw_structure(order, comp.size).tocoo()
                gv = comp.scale_factor if comp.scaled else 1.0
                keep = R.row >= R.col
                add(idx[R.row[keep]], idx[R.col[keep]], gv * R.data[keep], comp.hyper)
                add(idx, idx, np.full(comp.size, gv * RW_JITTER), comp.hyper)
            if comp.constrained:
                # soft sum-to-zero: precision of a unit pseudo-observation on
                # the component sum, not scaled by tau
                a, b = np.tril_indices(comp.size)
                add(idx[a], idx[b], np.full(a.shape[0], SUM_TO_ZERO_PREC), -1)

        r = np.concatenate(rows) if rows else np.zeros(0, dtype=INDEX)
        c = np.concatenate(cols) if cols else np.zeros(0, dtype=INDEX)
        self.base = np.concatenate(base) if base else np.zeros(0)
        self.hyp = np.concatenate(hyp) if hyp else np.zeros(0, dtype=INDEX)
        self.q = model.q

        hi = np.maximum(r, c)
        lo = np.minimum(r, c)
        d = np.arange(m, dtype=INDEX)
        key = np.concatenate([hi * INDEX(m) + lo, d * INDEX(m) + d])
        self.base = np.concatenate([self.base, np.zeros(m)])
        self.hyp = np.concatenate([self.hyp, np.full(m, -1, dtype=INDEX)])
        uniq, inv = np.unique(key, return_inverse=True)
        self.slot = inv
        self.nnz = uniq.size
        er = (uniq // m).astype(INDEX)
        ec = (uniq % m).astype(INDEX)
        self.pattern = SparsePattern.from_entries(m, er, ec)
        lptr, li = self.pattern.lower()
        if not np.array_equal(li, ec):  # pragma: no cover
            raise LgmError("internal: precision layout mismatch")
        self.m = m

    def lower_values(self, theta: np.ndarray) -> np.ndarray:
        if theta.shape != (self.q,):
            raise LgmError("theta length mismatch")
        factors = np.ones(self.hyp.shape[0])
        mask = self.hyp >= 0
        if mask.any():
            factors[mask] = np.exp(theta)[self.hyp[mask]]
        return np.bincount(self.slot, weights=self.base * factors,
                           minlength=self.nnz)

    def instance(self, theta: np.ndarray) -> PrecisionInstance:
        vals = self.lower_values(theta)
        sym = SparseSym(self.pattern, vals, validate=False)
        indptr, indices, gather = self.pattern.full_csr_structure()
        full = sp.csr_array((vals[gather], indices, indptr), shape=(self.m, self.m))
        return PrecisionInstance(sym=sym, full=full)


class DesignMatrix:
    """Sparse n x m matrix mapping the latent field to linear predictors."""

    def __init__(self, mat: sp.csr_array):
        self.mat = mat.tocsr()
        counts = np.diff(self.mat.indptr)
        if (counts < 1).any():
            raise LgmError("every observation row needs at least one entry")

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    @property
    def m(self) -> int:
        return self.mat.shape[1]

    def __matmul__(self, x):
        return self.mat @ x

    def T_matvec(self, y):
        return self.mat.T @ y

    def row_entries(self):
        """(indptr, indices, data) of the CSR layout."""
        return self.mat.indptr, self.mat.indices, self.mat.data


def _get_column(data, name: str, n_expected: int | None = None) -> np.ndarray:
    try:
        col = data[name]
    except (KeyError, IndexError):
        raise UnknownColumn(f"column {name!r} not found in data") from None
    arr = np.asarray(col)
    if n_expected is not None and arr.shape[0] != n_expected:
        raise LgmError(f"column {name!r} has length {arr.shape[0]}, expected {n_expected}")
    return arr


def _data_length(data) -> int:
    if hasattr(data, "shape"):
        return int(data.shape[0])
    for v in data.values():
        return int(np.asarray(v).shape[0])
    raise LgmError("empty data table")


def build_model(desc, data):
    """Assemble (LatentModel, DesignMatrix, Family) from a description.

    `desc` is a ModelDescription (see modelspec); `data` is a pandas
    DataFrame or a mapping of equal-length arrays.
    """
    from .families import build_family
    from .modelspec import ModelDescription

    if not isinstance(desc, ModelDescription):
        raise LgmError("desc must be a ModelDescription")
    desc.validate()
    n = _data_length(data)

    hypers: list[HyperParam] = []
    if desc.family == "gaussian":
        hypers.append(HyperParam("obs_log_prec", desc.obs_prior_shape, desc.obs_prior_rate))

    comps: list[ComponentSpec] = []
    triplet_rows: list[np.ndarray] = []
    triplet_cols: list[np.ndarray] = []
    triplet_vals: list[np.ndarray] = []
    offset = 0
    all_rows = np.arange(n, dtype=INDEX)

    for decl in desc.components:
        name = decl.display_name()
        if decl.kind == "intercept":
            comps.append(ComponentSpec("intercept", name, 1,
                                       fixed_prec=decl.prec, weight=decl.weight))
            triplet_rows.append(all_rows)
            triplet_cols.append(np.full(n, offset, dtype=INDEX))
            triplet_vals.append(np.full(n, decl.weight))
            offset += 1
            continue
        col = _get_column(data, decl.column, n)
        if decl.kind == "linear":
            x = np.asarray(col, dtype=float)
            if not np.isfinite(x).all():
                raise NonFiniteCovariate(f"covariate {decl.column!r} has non-finite values")
            comps.append(ComponentSpec("linear", name, 1,
                                       fixed_prec=decl.prec, weight=decl.weight))
            triplet_rows.append(all_rows)
            triplet_cols.append(np.full(n, offset, dtype=INDEX))
            triplet_vals.append(x * decl.weight)
            offset += 1
            continue

        shape = decl.prior_shape if decl.prior_shape is not None else HYPER_SHAPE_DEFAULT
        rate = decl.prior_rate if decl.prior_rate is not None else HYPER_RATE_DEFAULT
        hyper_idx = len(hypers)
        hypers.append(HyperParam(f"log_prec_{name}", shape, rate))

        if decl.kind == "iid":
            levels, codes = np.unique(np.asarray(col), return_inverse=True)
            size = decl.size if decl.size is not None else levels.shape[0]
            if size != levels.shape[0]:
                raise LgmError(
                    f"component {name!r}: declared size {size} != {levels.shape[0]} observed levels")
            if size < 1:
                raise EmptyComponent(f"component {name!r} has no levels")
            comps.append(ComponentSpec("iid", name, size, hyper=hyper_idx,
                                       weight=decl.weight, labels=levels))
        else:  # rw1 / rw2
            vals = np.asarray(col)
            if not np.issubdtype(vals.dtype, np.integer):
                fv = np.asarray(col, dtype=float)
                if not np.isfinite(fv).all():
                    raise NonFiniteCovariate(f"index {decl.column!r} has non-finite values")
                vals = fv.astype(np.int64)
                if not np.array_equal(vals, fv):
                    raise LgmError(f"component {name!r}: index column must be integer bins")
            if vals.size and vals.min() < 0:
                raise LgmError(f"component {name!r}: negative bin index")
            size = decl.size if decl.size is not None else int(vals.max()) + 1
            if vals.size and vals.max() >= size:
                raise LgmError(f"component {name!r}: bin index {vals.max()} >= size {size}")
            sf = rw_scale_factor(1 if decl.kind == "rw1" else 2, size) if decl.scaled else 1.0
            comps.append(ComponentSpec(decl.kind, name, size, hyper=hyper_idx,
                                       weight=decl.weight, scaled=decl.scaled,
                                       constrained=decl.constrained,
                                       scale_factor=sf))
            codes = vals
        triplet_rows.append(all_rows)
        triplet_cols.append(offset + np.asarray(codes, dtype=INDEX))
        triplet_vals.append(np.full(n, decl.weight))
        offset += comps[-1].size

    if not comps:
        raise EmptyComponent("model has no components")
    model = LatentModel(comps, hypers)
    A = sp.csr_array(
        (np.concatenate(triplet_vals),
         (np.concatenate(triplet_rows), np.concatenate(triplet_cols))),
        shape=(n, model.m),
    )
    design = DesignMatrix(A)
    family = build_family(desc, data, n)
    return model, design, family
