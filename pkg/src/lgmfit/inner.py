"""Gaussian approximation to the conditional posterior of the latent field.

The modern path keeps the latent field at model size m and folds the
likelihood curvature in through Q_X = Q(theta) + A^T D A.  The classic-compat
path augments the field with the linear predictors (first n entries) and a
tiny-noise link prior; both share one damped-Newton driver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse as sp

from .errors import LgmError, NotPositiveDefinite
from .families import Family, grad_loglik, log_lik_vec, pseudo_data
from .model import DesignMatrix, LatentModel
from .sparse.chol import CholFactor, factorize
from .sparse.pattern import INDEX, SparsePattern, SparseSym
from .sparse.symbolic import build_symbolic

TOL_STEP = 1e-6
TOL_GRAD = 1e-6
MAX_ITER = 50
MAX_HALVINGS = 10
TAU_NOISE_DEFAULT = float(np.exp(14.0))


@dataclass
class InnerResult:
    """Mode and curvature of the Gaussian approximation at one theta."""

    mu: np.ndarray
    eta: np.ndarray
    factor: CholFactor
    iterations: int
    converged: bool
    loglik_at_mode: float
    logdet_QX: float
    grad_norm: float
    prior_quad: float        # mu^T Q(theta) mu
    prior_logdet: float      # logdet Q(theta)
    clamped: int

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def _row_pair_triplets(A: sp.csr_array):
    """All (i>=j) index pairs within each row of A with their coefficient
    products and owning row: the assembly recipe for A^T diag(c) A."""
    indptr, indices, data = A.indptr, A.indices, A.data
    counts = np.diff(indptr)
    rows_out = []
    hi_out = []
    lo_out = []
    coef_out = []
    for k in np.unique(counts):
        if k == 0:
            continue
        rows_k = np.nonzero(counts == k)[0]
        pos = indptr[rows_k][:, None] + np.arange(k)[None, :]
        cols = indices[pos]          # (r, k)
        vals = data[pos]
        ai, bi = np.tril_indices(k)
        ca = cols[:, ai]
        cb = cols[:, bi]
        hi = np.maximum(ca, cb)
        lo = np.minimum(ca, cb)
        coef = vals[:, ai] * vals[:, bi]
        npair = ai.shape[0]
        rows_out.append(np.repeat(rows_k, npair))
        hi_out.append(hi.ravel())
        lo_out.append(lo.ravel())
        coef_out.append(coef.ravel())
    if not rows_out:
        z = np.zeros(0, dtype=INDEX)
        return z, z, z, np.zeros(0)
    return (np.concatenate(rows_out).astype(INDEX),
            np.concatenate(hi_out).astype(INDEX),
            np.concatenate(lo_out).astype(INDEX),
            np.concatenate(coef_out))


def _union_pattern(m: int, prior_pattern: SparsePattern, hi, lo):
    """Union of the prior pattern and extra lower entries; returns the new
    pattern plus slot maps for the prior entries and for (hi, lo)."""
    lptr, li = prior_pattern.lower()
    prows = prior_pattern.lower_entry_rows()
    key_prior = prows * INDEX(m) + li
    key_extra = np.asarray(hi, dtype=INDEX) * INDEX(m) + np.asarray(lo, dtype=INDEX)
    allk = np.concatenate([key_prior, key_extra])
    uniq, inv = np.unique(allk, return_inverse=True)
    pattern = SparsePattern.from_entries(m, (uniq // m).astype(INDEX),
                                         (uniq % m).astype(INDEX))
    if not np.array_equal(pattern.lower()[1], (uniq % m).astype(INDEX)):
        raise LgmError("internal: union layout mismatch")  # pragma: no cover
    return pattern, inv[:key_prior.size], inv[key_prior.size:], uniq.size


class ModernProblem:
    """Latent field = model components; Q_X = Q(theta) + A^T D A."""

    def __init__(self, model: LatentModel, design: DesignMatrix, family: Family):
        self.model = model
        self.family = family
        self.A = design.mat
        self.dim = model.m
        plan = model._precision_plan()
        obs, hi, lo, coef = _row_pair_triplets(self.A)
        self.pattern, self._map_prior, self._map_pairs, self._nnz = _union_pattern(
            model.m, plan.pattern, hi, lo)
        self._pair_obs = obs
        self._pair_coef = coef
        self.symbolic = None  # filled by the driver with the chosen ordering

    def prior_instance(self, theta):
        return self.model.prior_instance(theta)

    def prior_lower(self, prior_inst):
        return prior_inst.sym.values

    def eta(self, mu: np.ndarray) -> np.ndarray:
        return self.A @ mu

    def rhs(self, b: np.ndarray) -> np.ndarray:
        return self.A.T @ b

    def assemble(self, prior_lower: np.ndarray, c: np.ndarray) -> SparseSym:
        vals = np.bincount(self._map_prior, weights=prior_lower,
                           minlength=self._nnz)
        if self._pair_obs.size:
            vals += np.bincount(self._map_pairs,
                                weights=self._pair_coef * c[self._pair_obs],
                                minlength=self._nnz)
        return SparseSym(self.pattern, vals, validate=False)

    def grad(self, eta, mu, prior_inst, theta) -> np.ndarray:
        return self.A.T @ grad_loglik(self.family, eta, theta) - prior_inst.matvec(mu)


class ClassicProblem:
    """Augmented field {eta, X}: tiny-noise link prior, likelihood on eta."""

    def __init__(self, model: LatentModel, design: DesignMatrix, family: Family,
                 tau_noise: float = TAU_NOISE_DEFAULT):
        self.model = model
        self.family = family
        self.A = design.mat
        self.tau_noise = float(tau_noise)
        n, m = self.A.shape
        self.n = n
        self.dim = n + m
        plan = model._precision_plan()

        # static part: tau*I on eta, -tau*A cross block, tau*A^T A on X
        obs, phi, plo, coef = _row_pair_triplets(self.A)
        Acoo = self.A.tocoo()
        cross_hi = (Acoo.col + n).astype(INDEX)
        cross_lo = Acoo.row.astype(INDEX)
        cross_val = -self.tau_noise * Acoo.data
        eta_diag = np.arange(n, dtype=INDEX)
        hi = np.concatenate([eta_diag, cross_hi, phi + n])
        lo = np.concatenate([eta_diag, cross_lo, plo + n])
        static_val = np.concatenate([
            np.full(n, self.tau_noise), cross_val, self.tau_noise * coef])

        lptr, li = plan.pattern.lower()
        prows = plan.pattern.lower_entry_rows()
        hi_all = np.concatenate([hi, prows + n])
        lo_all = np.concatenate([lo, li + n])
        key = hi_all * INDEX(self.dim) + lo_all
        d = np.arange(self.dim, dtype=INDEX)
        key = np.concatenate([key, d * INDEX(self.dim) + d])
        uniq, inv = np.unique(key, return_inverse=True)
        self._nnz = uniq.size
        self.pattern = SparsePattern.from_entries(
            self.dim, (uniq // self.dim).astype(INDEX), (uniq % self.dim).astype(INDEX))
        if not np.array_equal(self.pattern.lower()[1], (uniq % self.dim).astype(INDEX)):
            raise LgmError("internal: augmented layout mismatch")  # pragma: no cover
        inv_static = inv[:hi.size]
        self._map_prior = inv[hi.size:hi.size + prows.size]
        self._static = np.bincount(inv_static, weights=static_val,
                                   minlength=self._nnz)
        self._diag_slots = inv[hi.size + prows.size:][ :n]
        self.symbolic = None

    def prior_instance(self, theta):
        from .model import PrecisionInstance

        inner_inst = self.model.prior_instance(theta)
        vals = self._static.copy()
        vals[self._map_prior] += inner_inst.sym.values  # slots are unique
        sym = SparseSym(self.pattern, vals, validate=False)
        indptr, indices, gather = self.pattern.full_csr_structure()
        full = sp.csr_array((vals[gather], indices, indptr),
                            shape=(self.dim, self.dim))
        return PrecisionInstance(sym=sym, full=full)

    def prior_lower(self, prior_inst):
        return prior_inst.sym.values

    def eta(self, mu: np.ndarray) -> np.ndarray:
        return mu[:self.n]

    def rhs(self, b: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim)
        out[:self.n] = b
        return out

    def assemble(self, prior_lower: np.ndarray, c: np.ndarray) -> SparseSym:
        vals = prior_lower.copy()
        vals[self._diag_slots] += c
        return SparseSym(self.pattern, vals, validate=False)

    def grad(self, eta, mu, prior_inst, theta) -> np.ndarray:
        g = np.zeros(self.dim)
        g[:self.n] = grad_loglik(self.family, eta, theta)
        return g - prior_inst.matvec(mu)


def _newton(problem, theta, warm_start, *, order="amd", max_iter=MAX_ITER,
            tol_step=TOL_STEP, tol_grad=TOL_GRAD) -> InnerResult:
    theta = np.asarray(theta, dtype=float)
    if not np.isfinite(theta).all():
        raise LgmError("theta must be finite")
    family = problem.family
    prior = problem.prior_instance(theta)
    prior_lower = problem.prior_lower(prior)
    if problem.symbolic is None:
        problem.symbolic = build_symbolic(problem.pattern, order)

    if warm_start is not None:
        mu = np.array(warm_start, dtype=float)
        if mu.shape != (problem.dim,):
            raise LgmError("warm start has wrong length")
    else:
        mu = np.zeros(problem.dim)
    eta = problem.eta(mu)
    ll = float(np.sum(log_lik_vec(family, eta, theta)))
    obj = ll - 0.5 * prior.quad(mu)

    factor = None
    used_bc = None
    iterations = 0
    converged = False
    grad_norm = np.inf
    clamped = 0
    for it in range(1, max_iter + 1):
        pd = pseudo_data(family, eta, theta)
        clamped = pd.clamped
        QX = problem.assemble(prior_lower, pd.c)
        factor = _factorize_clamped(QX, problem.symbolic)
        used_bc = (pd.b, pd.c)
        rhs = problem.rhs(pd.b)
        mu_new = factor.solve(rhs)
        step = mu_new - mu

        alpha = 1.0
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            cand = mu + alpha * step
            eta_c = problem.eta(cand)
            ll_c = float(np.sum(log_lik_vec(family, eta_c, theta)))
            obj_c = ll_c - 0.5 * prior.quad(cand)
            if np.isfinite(obj_c) and obj_c >= obj - 1e-12 * (1.0 + abs(obj)):
                accepted = (cand, eta_c, ll_c, obj_c)
                break
            alpha *= 0.5
        iterations = it
        if accepted is None:
            break
        step_inf = float(np.max(np.abs(alpha * step))) if step.size else 0.0
        mu, eta, ll, obj = accepted
        grad = problem.grad(eta, mu, prior, theta)
        gscale = 1.0 + (float(np.max(np.abs(rhs))) if rhs.size else 0.0)
        grad_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if grad_norm <= tol_grad * gscale or step_inf < tol_step:
            converged = True
            break

    # factor must describe Q_X at the returned mode
    pd = pseudo_data(family, eta, theta)
    if factor is None or used_bc is None or not (
            np.array_equal(pd.b, used_bc[0]) and np.array_equal(pd.c, used_bc[1])):
        QX = problem.assemble(prior_lower, pd.c)
        factor = _factorize_clamped(QX, problem.symbolic)

    prior_factor = factorize(prior.sym, symbolic=build_symbolic(
        prior.sym.pattern, "amd"))
    return InnerResult(
        mu=mu, eta=eta, factor=factor, iterations=iterations,
        converged=converged, loglik_at_mode=ll, logdet_QX=factor.logdet,
        grad_norm=grad_norm, prior_quad=prior.quad(mu),
        prior_logdet=prior_factor.logdet, clamped=clamped,
    )


def _factorize_clamped(QX: SparseSym, symbolic) -> CholFactor:
    """Factorize; on a pivot failure retry once with a jittered diagonal."""
    try:
        return factorize(QX, symbolic=symbolic)
    except NotPositiveDefinite:
        lptr, li = QX.pattern.lower()
        rows = QX.pattern.lower_entry_rows()
        diag_mask = rows == li
        bump = QX.values.copy()
        scale = max(1.0, float(np.max(np.abs(bump[diag_mask]))))
        bump[diag_mask] += 1e-8 * scale
        return factorize(SparseSym(QX.pattern, bump, validate=False),
                         symbolic=symbolic)


def gaussian_approx(model: LatentModel, design: DesignMatrix, family: Family,
                    theta, warm_start=None, *, problem: ModernProblem | None = None,
                    order="amd") -> InnerResult:
    """Newton iteration for mu(theta) and Q_X(theta) on the model-sized field."""
    if problem is None:
        problem = ModernProblem(model, design, family)
    return _newton(problem, theta, warm_start, order=order)


def classic_augmented_approx(model: LatentModel, design: DesignMatrix,
                             family: Family, theta,
                             tau_noise: float = TAU_NOISE_DEFAULT,
                             warm_start=None, *,
                             problem: ClassicProblem | None = None,
                             order="amd") -> InnerResult:
    """Same driver on the augmented {eta, X} field with a tiny-noise link."""
    if problem is None:
        problem = ClassicProblem(model, design, family, tau_noise)
    return _newton(problem, theta, warm_start, order=order)
