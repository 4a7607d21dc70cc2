"""Brute-force reference posteriors.

Everything here recomputes the model density from first principles with
dense linear algebra and textbook formulas: its own likelihood expressions,
its own prior construction from the component metadata, and generic scipy
quadrature or a plain random-walk sampler on top.  None of the approximation
machinery (sparse factorizations, pseudo-data updates, grid integration) is
used, so agreement between the two stacks is evidence, not tautology.

Deliberate limits keep the brute force honest: dense matrices cap at 500
rows, adaptive quadrature at two latent dimensions plus at most one
hyperparameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .errors import LgmError

DENSE_CAP = 500
BURN_FRACTION = 0.2
N_BATCHES = 50
ACCEPT_LO = 0.23
ACCEPT_HI = 0.40

# defaults mirrored from the model contract (values, not code)
_FIXED_PREC = 1e-3


@dataclass
class OracleResult:
    means: np.ndarray
    sds: np.ndarray
    mcse: np.ndarray | None = None
    log_evidence: float | None = None
    meta: dict = field(default_factory=dict)


def dense_reference(Q=None, *, design=None, cov=None) -> np.ndarray:
    """Dense covariance from a precision, or dense diag(A Sigma A^T)."""
    if Q is not None:
        dense = Q.to_dense() if hasattr(Q, "to_dense") else np.asarray(Q, dtype=float)
        if dense.shape[0] > DENSE_CAP:
            raise LgmError(f"dense reference capped at {DENSE_CAP} rows")
        return np.linalg.inv(dense)
    if design is None or cov is None:
        raise LgmError("give Q, or design and cov")
    A = design.mat.toarray() if hasattr(design, "mat") else np.asarray(design, dtype=float)
    if max(A.shape) > DENSE_CAP * 40 or cov.shape[0] > DENSE_CAP:
        raise LgmError("dense reference cap exceeded")
    return np.einsum("ij,jk,ik->i", A, np.asarray(cov, dtype=float), A)


def _dense_design(design) -> np.ndarray:
    return design.mat.toarray() if hasattr(design, "mat") else np.asarray(design, dtype=float)


def _loglik(kind, y, eta, offset, trials, tau) -> float:
    """Observation log-likelihood, written out directly."""
    if kind == "gaussian":
        r = y - eta
        n = y.shape[0]
        return 0.5 * n * (math.log(tau) - math.log(2.0 * math.pi)) \
            - 0.5 * tau * float(r @ r)
    if kind == "poisson":
        lam = eta + offset
        return float(np.sum(y * lam - np.exp(lam) - gammaln(y + 1.0)))
    if kind == "bernoulli":
        s = trials if trials is not None else np.ones_like(y)
        # log C(s, y) + y*eta - s*log(1+e^eta)
        return float(np.sum(
            gammaln(s + 1.0) - gammaln(y + 1.0) - gammaln(s - y + 1.0)
            + y * eta - s * np.log1p(np.exp(-np.abs(eta)))
            - s * np.maximum(eta, 0.0)))
    raise LgmError(f"unsupported family {kind!r}")


def _prior_matrix(model, theta) -> np.ndarray:
    """Dense latent precision rebuilt from component metadata alone."""
    blocks = []
    for comp in model.components:
        if comp.kind in ("intercept", "linear"):
            prec = comp.fixed_prec if comp.fixed_prec is not None else _FIXED_PREC
            blocks.append(np.full(comp.size, prec))
        elif comp.kind == "iid":
            blocks.append(np.full(comp.size, math.exp(theta[comp.hyper])))
        else:
            raise LgmError(
                f"oracle prior supports intercept/linear/iid, not {comp.kind}")
    return np.diag(np.concatenate(blocks))


def _theta_log_prior(model, theta) -> float:
    total = 0.0
    for t, h in zip(theta, model.hypers):
        total += (h.shape * math.log(h.rate) - gammaln(h.shape)
                  + h.shape * t - h.rate * math.exp(t))
    return total


def _make_log_joint(model, design, family, theta_fixed):
    """Return (f, m, q_free) with f(x, theta_free) the exact log joint."""
    A = _dense_design(design)
    y = family.y
    offset = family.offset if family.offset is not None else np.zeros_like(y)
    trials = getattr(family, "trials", None)
    m = model.m
    q = model.q
    if theta_fixed is None and q == 0:
        theta_fixed = np.zeros(0)
    if theta_fixed is not None:
        theta_fixed = np.asarray(theta_fixed, dtype=float)
        if theta_fixed.shape != (q,):
            raise LgmError("theta has wrong length")

    def logjoint(x, theta_free=None):
        if theta_fixed is not None:
            th = theta_fixed
        else:
            th = np.asarray(theta_free, dtype=float)
        Q = _prior_matrix(model, th)
        sign, logdet = np.linalg.slogdet(Q)
        if sign <= 0:
            return -np.inf
        eta = A @ x
        if family.kind == "gaussian":
            tau = math.exp(th[family.obs_prec_index])
        else:
            tau = None
        val = -0.5 * float(x @ (Q @ x)) + 0.5 * logdet \
            - 0.5 * m * math.log(2.0 * math.pi) \
            + _loglik(family.kind, y, eta, offset, trials, tau)
        if theta_fixed is None:
            val += _theta_log_prior(model, th)
        return val

    q_free = 0 if theta_fixed is not None else q
    return logjoint, m, q_free


def _mode_and_spread(fun, dim):
    """Maximize a log density; return (mode, per-axis sd from the Hessian)."""
    res = optimize.minimize(lambda z: -fun(z), np.zeros(dim), method="BFGS")
    mode = res.x
    h = 1e-4
    hess = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            ei = np.zeros(dim)
            ej = np.zeros(dim)
            ei[i] = h
            ej[j] = h
            val = (fun(mode + ei + ej) - fun(mode + ei - ej)
                   - fun(mode - ei + ej) + fun(mode - ei - ej)) / (4 * h * h)
            hess[i, j] = hess[j, i] = -val
    cov = np.linalg.inv(hess)
    sd = np.sqrt(np.maximum(np.diag(cov), 1e-12))
    return mode, sd


def quadrature_posterior(model, design, family, theta=None,
                         rel_tol: float = 1e-8,
                         half_width: float = 8.0) -> OracleResult:
    """Adaptive-quadrature posterior moments for tiny models.

    With `theta` given the hyperparameters are held fixed and only the
    latent dimensions (m <= 2) are integrated; with `theta=None` one free
    hyperparameter (q <= 1) joins the integral.  Integration runs in
    mode-centered standardized coordinates so tolerances act on an O(1)
    integrand.
    """
    logjoint, m, q_free = _make_log_joint(model, design, family, theta)
    if m > 2:
        raise LgmError("quadrature oracle capped at m <= 2")
    if q_free > 1:
        raise LgmError("quadrature oracle capped at one free hyperparameter")
    dim = m + q_free

    def f(z):
        return logjoint(z[:m], z[m:]) if q_free else logjoint(z)

    mode, sd = _mode_and_spread(f, dim)
    shift = f(mode)

    def dens(*u):
        return math.exp(f(mode + sd * np.array(u)) - shift)

    opts = dict(epsabs=rel_tol * 1e-2, epsrel=rel_tol)
    w = half_width

    def integrate_nd(weight):
        if dim == 1:
            val, _ = integrate.quad(
                lambda a: weight(np.array([a])) * dens(a), -w, w, **opts)
        elif dim == 2:
            val, _ = integrate.dblquad(
                lambda b, a: weight(np.array([a, b])) * dens(a, b),
                -w, w, -w, w, **opts)
        else:
            val, _ = integrate.tplquad(
                lambda c, b, a: weight(np.array([a, b, c])) * dens(a, b, c),
                -w, w, -w, w, -w, w, **opts)
        return val

    z0 = integrate_nd(lambda u: 1.0)
    mean_u = np.array(
        [integrate_nd(lambda u, k=k: u[k]) for k in range(dim)]) / z0
    second = np.array(
        [integrate_nd(lambda u, k=k: (u[k] - mean_u[k]) ** 2)
         for k in range(dim)]) / z0
    means = mode + sd * mean_u
    sds = sd * np.sqrt(second)
    log_evidence = shift + math.log(z0) + float(np.sum(np.log(sd)))
    return OracleResult(means=means, sds=sds, log_evidence=log_evidence,
                        meta={"dim": dim, "mode": mode, "free_theta": q_free})


def metropolis(model, design, family, draws: int, seed: int,
               theta=None, scale: float | None = None,
               start=None) -> OracleResult:
    """Random-walk sampler on the exact joint; the slow second opinion.

    The proposal is an isotropic normal step on the full state.  Its scale
    adapts toward a 23-40% acceptance rate during burn-in (the first 20% of
    draws) and is frozen afterwards, so retained draws form a fixed-kernel
    chain.  Standard errors come from 50 batch means.
    """
    logjoint, m, q_free = _make_log_joint(model, design, family, theta)
    dim = m + q_free

    def f(z):
        return logjoint(z[:m], z[m:]) if q_free else logjoint(z)

    rng = np.random.default_rng(seed)
    state = np.zeros(dim) if start is None else np.array(start, dtype=float)
    if state.shape != (dim,):
        raise LgmError("start has wrong length")
    cur = f(state)
    s = 2.4 / math.sqrt(dim) if scale is None else float(scale)

    burn = int(draws * BURN_FRACTION)
    kept = np.empty((draws - burn, dim))
    window_acc = 0
    window_n = 0
    accepted_total = 0
    for it in range(draws):
        prop = state + s * rng.normal(size=dim)
        cand = f(prop)
        if math.log(rng.uniform()) < cand - cur:
            state = prop
            cur = cand
            window_acc += 1
            accepted_total += 1
        window_n += 1
        if it < burn and window_n == 100:
            rate = window_acc / window_n
            if rate < ACCEPT_LO:
                s *= 0.8
            elif rate > ACCEPT_HI:
                s *= 1.25
            window_acc = 0
            window_n = 0
        if it >= burn:
            kept[it - burn] = state

    means = kept.mean(axis=0)
    sds = kept.std(axis=0, ddof=1)
    nb = min(N_BATCHES, kept.shape[0])
    usable = (kept.shape[0] // nb) * nb
    batches = kept[:usable].reshape(nb, usable // nb, dim).mean(axis=1)
    mcse = batches.std(axis=0, ddof=1) / math.sqrt(nb)
    return OracleResult(
        means=means, sds=sds, mcse=mcse,
        meta={"acceptance": accepted_total / draws, "scale": s,
              "retained": kept.shape[0], "dim": dim})
