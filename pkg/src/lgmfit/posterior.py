"""Posterior marginals over the theta grid, the low-rank mean correction,
and mixture summaries.

Marginals are Gaussian mixtures: one component per grid point, weighted by
the grid weights.  Linear-predictor variances come entirely from stored
selected-inverse entries; no dense covariance is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse as sp
from scipy.special import ndtr

from .errors import FitError, LgmError, MissingEntry
from .families import Family, expected_loglik_terms
from .inner import InnerResult, _row_pair_triplets
from .model import DesignMatrix, LatentModel
from .outer import HyperGrid
from .sparse.chol import inverse_columns, selected_inverse
from .sparse.symbolic import Symbolic, lookup_lower_positions

VB_STEP_TOL = 1e-4
VB_MAX_ITER = 25
VB_MAX_HALVINGS = 5
VB_NODE_CAP = 30
QUANTILE_TOL = 1e-8
QUANTILE_LEVELS = (0.025, 0.5, 0.975)


class MarginalMixture:
    """Per-target Gaussian mixtures sharing one weight vector.

    means/sds have shape (K, T): K grid components, T targets."""

    def __init__(self, weights: np.ndarray, means: np.ndarray, sds: np.ndarray,
                 kind: str):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.sds = np.asarray(sds, dtype=float)
        self.kind = kind
        if self.means.shape != self.sds.shape or \
                self.means.shape[0] != self.weights.shape[0]:
            raise LgmError("mixture shape mismatch")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise LgmError("mixture weights must sum to 1")
        if (self.sds <= 0).any():
            raise LgmError("mixture sds must be positive")

    @property
    def n_targets(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def components(self, j: int) -> list[tuple[float, float, float]]:
        """(weight, mean, sd) triples for target j."""
        return [(float(w), float(m), float(s)) for w, m, s in
                zip(self.weights, self.means[:, j], self.sds[:, j])]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def variance(self) -> np.ndarray:
        m1 = self.mean()
        second = self.weights @ (self.sds ** 2 + self.means ** 2)
        return np.maximum(second - m1 ** 2, 0.0)

    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance())

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """Mixture CDF evaluated per target at x (shape (T,))."""
        z = (x[None, :] - self.means) / self.sds
        return self.weights @ ndtr(z)

    def select(self, idx) -> "MarginalMixture":
        idx = np.asarray(idx)
        return MarginalMixture(self.weights, self.means[:, idx],
                               self.sds[:, idx], self.kind)


def latent_marginals(grid: HyperGrid, corrected_means=None) -> MarginalMixture:
    """Mixture over grid points for each latent index.

    `corrected_means` (K, m) overrides the inner modes (mean correction)."""
    if not grid.points:
        raise FitError("empty grid")
    means = []
    sds = []
    for k, pt in enumerate(grid.points):
        mu = pt.inner.mu if corrected_means is None else corrected_means[k]
        var = selected_inverse(pt.inner.factor).diagonal()
        if (var <= 0).any():
            raise FitError("non-positive marginal variance from selected inverse")
        means.append(mu)
        sds.append(np.sqrt(var))
    return MarginalMixture(grid.weights, np.stack(means), np.stack(sds), "latent")


class LinpredPlan:
    """Maps design-row index pairs to selected-inverse slots, once per
    (design, symbolic) pair; evaluation is then two gathers + a bincount."""

    def __init__(self, design: DesignMatrix, symbolic: Symbolic):
        A = design.mat
        obs, hi, lo, coef = _row_pair_triplets(A)
        self.n = A.shape[0]
        self.obs = obs
        pr = symbolic.iperm[hi]
        pc = symbolic.iperm[lo]
        try:
            self.pos = lookup_lower_positions(symbolic.Lp, symbolic.Li, pr, pc)
        except MissingEntry as exc:  # pragma: no cover - construction guarantees
            raise MissingEntry(
                "design pair outside the factor pattern; Q_X union broken") from exc
        self.coef = coef * np.where(hi == lo, 1.0, 2.0)

    def variances(self, sel) -> np.ndarray:
        out = np.bincount(self.obs, weights=self.coef * sel.Cx[self.pos],
                          minlength=self.n)
        return out


def linpred_marginals(grid: HyperGrid, design: DesignMatrix,
                      corrected_means=None) -> MarginalMixture:
    """Mixture for each linear predictor: means A mu, variances from the
    selected inverse via Var(eta_i) = sum_jl A_ij A_il C_jl."""
    if not grid.points:
        raise FitError("empty grid")
    plan = LinpredPlan(design, grid.points[0].inner.factor.symbolic)
    means = []
    sds = []
    for k, pt in enumerate(grid.points):
        mu = pt.inner.mu if corrected_means is None else corrected_means[k]
        sel = selected_inverse(pt.inner.factor)
        var = plan.variances(sel)
        if (var <= 0).any():
            raise FitError("non-positive linear-predictor variance")
        means.append(design @ mu)
        sds.append(np.sqrt(var))
    return MarginalMixture(grid.weights, np.stack(means), np.stack(sds), "linpred")


@dataclass
class VBCorrection:
    nodes: np.ndarray
    lam: np.ndarray
    M: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = True


def default_vb_nodes(model: LatentModel) -> np.ndarray:
    """Fixed-effect indices, capped at VB_NODE_CAP."""
    return model.fixed_effect_indices()[:VB_NODE_CAP]


def vb_correct(inner: InnerResult, nodes, model: LatentModel,
               design: DesignMatrix, family: Family, theta,
               sigma_eta: np.ndarray | None = None,
               n_j: int | None = None) -> tuple[np.ndarray, VBCorrection]:
    """Low-rank mean correction mu* = mu + M lambda.

    Minimizes E[-log lik] + 0.5 mu*^T Q mu* over lambda, expectations by
    Gauss-Hermite with per-observation sds held at their uncorrected values;
    Newton steps with re-centering each iteration."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return inner.mu.copy(), VBCorrection(nodes, np.zeros(0),
                                             np.zeros((inner.dim, 0)), [], 0, True)
    if nodes.size > VB_NODE_CAP:
        raise LgmError(f"at most {VB_NODE_CAP} correction nodes supported")
    if inner.dim != model.m:
        raise LgmError("mean correction expects the model-sized latent field")
    theta = np.asarray(theta, dtype=float)

    A = design.mat
    M = inverse_columns(inner.factor, nodes)            # (m, p)
    AM = A @ M                                          # (n, p)
    Q = model.prior_instance(theta).full
    QM = Q @ M                                          # (m, p)

    if sigma_eta is None:
        plan = LinpredPlan(design, inner.factor.symbolic)
        var = plan.variances(selected_inverse(inner.factor))
        sigma_eta = np.sqrt(var)
    kwargs = {} if n_j is None else {"n_j": n_j}

    mu_star = inner.mu.copy()
    lam_total = np.zeros(nodes.size)

    def objective(mu_vec: np.ndarray) -> float:
        E, _, _ = expected_loglik_terms(family, A @ mu_vec, sigma_eta, theta,
                                        **kwargs)
        return float(-np.sum(E) + 0.5 * (mu_vec @ (Q @ mu_vec)))

    trace = [objective(mu_star)]
    converged = False
    iterations = 0
    for it in range(1, VB_MAX_ITER + 1):
        iterations = it
        _, dE, d2E = expected_loglik_terms(family, A @ mu_star, sigma_eta,
                                           theta, **kwargs)
        grad = -(AM.T @ dE) + M.T @ (Q @ mu_star)
        hess = AM.T @ (AM * (-d2E)[:, None]) + M.T @ QM
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.solve(hess + 1e-10 * np.eye(nodes.size), grad)
        applied = None
        scale = 1.0
        for _ in range(VB_MAX_HALVINGS + 1):
            cand = mu_star + M @ (scale * step)
            fc = objective(cand)
            if np.isfinite(fc) and fc <= trace[-1] + 1e-12 * (1 + abs(trace[-1])):
                applied = (cand, fc, scale * step)
                break
            scale *= 0.5
        if applied is None:
            break
        mu_star, fval, taken = applied
        lam_total += taken
        trace.append(fval)
        if np.max(np.abs(taken)) < VB_STEP_TOL:
            converged = True
            break
    return mu_star, VBCorrection(nodes, lam_total, M, trace, iterations, converged)


@dataclass
class Summary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float


class Summaries:
    """Vectorized per-target summaries with list-like access."""

    def __init__(self, mean, sd, q025, q50, q975, names=None):
        self.mean = mean
        self.sd = sd
        self.q025 = q025
        self.q50 = q50
        self.q975 = q975
        self.names = names

    def __len__(self) -> int:
        return self.mean.shape[0]

    def __getitem__(self, j: int) -> Summary:
        return Summary(float(self.mean[j]), float(self.sd[j]),
                       float(self.q025[j]), float(self.q50[j]),
                       float(self.q975[j]))

    def rows(self):
        return [self[j] for j in range(len(self))]


def mixture_quantiles(mix: MarginalMixture, probs, chunk: int = 20000) -> np.ndarray:
    """Bisection on the mixture CDF to QUANTILE_TOL per probability level.

    Returns (len(probs), T)."""
    probs = np.asarray(probs, dtype=float)
    T = mix.n_targets
    out = np.empty((probs.shape[0], T))
    for start in range(0, T, chunk):
        idx = np.arange(start, min(start + chunk, T))
        sub_m = mix.means[:, idx]
        sub_s = mix.sds[:, idx]
        w = mix.weights[:, None]
        lo0 = (sub_m - 10.0 * sub_s).min(axis=0)
        hi0 = (sub_m + 10.0 * sub_s).max(axis=0)
        for pi, p in enumerate(probs):
            lo = lo0.copy()
            hi = hi0.copy()
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                F = np.sum(w * ndtr((mid[None, :] - sub_m) / sub_s), axis=0)
                err = F - p
                if np.max(np.abs(err)) <= QUANTILE_TOL:
                    break
                high = err > 0
                hi = np.where(high, mid, hi)
                lo = np.where(high, lo, mid)
            out[pi, idx] = 0.5 * (lo + hi)
    return out


def summarize(mix: MarginalMixture, names=None) -> Summaries:
    """Mixture mean/sd plus 0.025/0.5/0.975 quantiles per target."""
    qs = mixture_quantiles(mix, QUANTILE_LEVELS)
    return Summaries(mix.mean(), mix.sd(), qs[0], qs[1], qs[2], names)
