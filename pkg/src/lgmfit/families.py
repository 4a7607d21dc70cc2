"""Observation families: log-likelihood, second-order pseudo-data, and
Gauss-Hermite expected log-likelihood.

All functions treat `eta` as the linear predictor A x; the Poisson exposure
enters as an additive log-offset inside the family, so callers never append
offsets to eta themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, roots_hermite

from .errors import DataError, LgmError

C_MIN = 1e-8
N_GH_DEFAULT = 15

KINDS = ("gaussian", "poisson", "bernoulli")


@dataclass
class Family:
    """Observation family bound to its data columns.

    `offset` is the additive log-scale offset (log exposure for Poisson;
    zeros otherwise).  `obs_prec_index` locates the Gaussian observation
    log-precision inside theta; None for the other kinds.
    """

    kind: str
    y: np.ndarray
    offset: np.ndarray | None = None
    trials: np.ndarray | None = None
    obs_prec_index: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LgmError(f"unknown family {self.kind!r}")
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.shape[0]
        if self.offset is None:
            self.offset = np.zeros(n)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.offset.shape != (n,):
            raise LgmError("offset length mismatch")
        if not np.isfinite(self.offset).all():
            raise DataError("offsets must be finite (exposures > 0)")
        if not np.isfinite(self.y).all():
            raise DataError("responses must be finite")
        if self.kind == "poisson":
            if (self.y < 0).any() or not np.array_equal(self.y, np.round(self.y)):
                raise DataError("poisson responses must be non-negative integers")
        if self.kind == "bernoulli":
            if self.trials is None:
                self.trials = np.ones(n)
            self.trials = np.asarray(self.trials, dtype=float)
            if self.trials.shape != (n,):
                raise LgmError("trials length mismatch")
            if (self.trials < 1).any() or not np.array_equal(self.trials, np.round(self.trials)):
                raise DataError("trials must be integers >= 1")
            if (self.y < 0).any() or (self.y > self.trials).any() \
                    or not np.array_equal(self.y, np.round(self.y)):
                raise DataError("bernoulli responses must be integers in [0, trials]")
        if self.kind == "gaussian" and self.obs_prec_index is None:
            raise LgmError("gaussian family needs obs_prec_index")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    def obs_precision(self, theta) -> float:
        return float(np.exp(np.asarray(theta, dtype=float)[self.obs_prec_index]))


def build_family(desc, data, n: int) -> Family:
    """Bind the description's family block to data columns."""
    from .model import _get_column

    y = np.asarray(_get_column(data, desc.response, n), dtype=float)
    offset = None
    if desc.offset is not None:
        offset = np.asarray(_get_column(data, desc.offset, n), dtype=float)
    elif desc.exposure is not None:
        e = np.asarray(_get_column(data, desc.exposure, n), dtype=float)
        if (e <= 0).any() or not np.isfinite(e).all():
            raise DataError("exposures must be positive and finite")
        offset = np.log(e)
    trials = None
    if desc.trials is not None:
        trials = np.asarray(_get_column(data, desc.trials, n), dtype=float)
    return Family(
        kind=desc.family,
        y=y,
        offset=offset,
        trials=trials,
        obs_prec_index=0 if desc.family == "gaussian" else None,
    )


def log_lik_vec(family: Family, eta: np.ndarray, theta=None) -> np.ndarray:
    """Per-observation exact log density/mass at linear predictor eta."""
    eta = np.asarray(eta, dtype=float)
    y = family.y
    if family.kind == "gaussian":
        tau = family.obs_precision(theta)
        return 0.5 * np.log(tau / (2.0 * np.pi)) - 0.5 * tau * (y - eta) ** 2
    if family.kind == "poisson":
        lam = eta + family.offset
        return y * lam - np.exp(lam) - gammaln(y + 1.0)
    # bernoulli / binomial with logit link
    s = family.trials
    ll = y * eta - s * np.logaddexp(0.0, eta)
    return ll + gammaln(s + 1.0) - gammaln(y + 1.0) - gammaln(s - y + 1.0)


def log_lik(family: Family, i: int, eta_i: float, theta=None) -> float:
    """Exact log-likelihood of observation i at eta_i."""
    sub = _subset(family, np.array([i]))
    return float(log_lik_vec(sub, np.array([eta_i]), theta)[0])


def _subset(family: Family, idx: np.ndarray) -> Family:
    return Family(
        kind=family.kind,
        y=family.y[idx],
        offset=family.offset[idx],
        trials=None if family.trials is None else family.trials[idx],
        obs_prec_index=family.obs_prec_index,
    )


def grad_loglik(family: Family, eta: np.ndarray, theta=None) -> np.ndarray:
    """d log lik / d eta, per observation."""
    eta = np.asarray(eta, dtype=float)
    y = family.y
    if family.kind == "gaussian":
        tau = family.obs_precision(theta)
        return tau * (y - eta)
    if family.kind == "poisson":
        return y - np.exp(eta + family.offset)
    p = _sigmoid(eta)
    return y - family.trials * p


@dataclass
class PseudoData:
    """Second-order expansion terms b, c with the clamp count."""

    b: np.ndarray
    c: np.ndarray
    clamped: int


def pseudo_data(family: Family, eta0: np.ndarray, theta=None) -> PseudoData:
    """Expansion of the log-likelihood around eta0.

    c_i = -d2/deta2 log lik (floored at C_MIN), b_i = gradient + c_i eta0_i,
    so b_i eta - 0.5 c_i eta^2 matches the log-likelihood to second order."""
    eta0 = np.asarray(eta0, dtype=float)
    if not np.isfinite(eta0).all():
        raise LgmError("expansion point must be finite")
    y = family.y
    if family.kind == "gaussian":
        tau = family.obs_precision(theta)
        c = np.full(eta0.shape[0], tau)
        g = tau * (y - eta0)
    elif family.kind == "poisson":
        mu = np.exp(eta0 + family.offset)
        c = mu.copy()
        g = y - mu
    else:
        p = _sigmoid(eta0)
        c = family.trials * p * (1.0 - p)
        g = y - family.trials * p
    clamped = int(np.count_nonzero(c < C_MIN))
    c = np.maximum(c, C_MIN)
    b = g + c * eta0
    return PseudoData(b=b, c=c, clamped=clamped)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@lru_cache(maxsize=32)
def gauss_hermite(n_j: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E[f(Z)], Z standard normal: sum w_j f(x_j)."""
    nodes, weights = roots_hermite(n_j)
    return nodes * np.sqrt(2.0), weights / np.sqrt(np.pi)


def expected_loglik_gh(family: Family, i: int, mu_i: float, sigma_i: float,
                       n_j: int = N_GH_DEFAULT, theta=None) -> float:
    """Gauss-Hermite estimate of E[log lik_i(eta)] with eta ~ N(mu, sigma^2)."""
    if sigma_i < 0:
        raise LgmError("sigma must be >= 0")
    sub = _subset(family, np.array([i]))
    if sigma_i == 0.0:
        return float(log_lik_vec(sub, np.array([mu_i]), theta)[0])
    x, w = gauss_hermite(n_j)
    eta = mu_i + sigma_i * x
    vals = log_lik_vec(
        Family(kind=sub.kind, y=np.repeat(sub.y, n_j),
               offset=np.repeat(sub.offset, n_j),
               trials=None if sub.trials is None else np.repeat(sub.trials, n_j),
               obs_prec_index=sub.obs_prec_index),
        eta, theta)
    return float(w @ vals)


def expected_loglik_terms(family: Family, mu: np.ndarray, sigma: np.ndarray,
                          theta=None, n_j: int = N_GH_DEFAULT):
    """Vectorized (E[l_i], dE/dmu_i, d2E/dmu_i^2) for all observations.

    Derivatives pass under the expectation: dE/dmu = E[l'(eta)],
    d2E/dmu2 = E[l''(eta)]; used by the mean-correction Newton step."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n = family.n
    x, w = gauss_hermite(n_j)
    eta = mu[:, None] + sigma[:, None] * x[None, :]   # (n, n_j)
    y = family.y[:, None]
    if family.kind == "gaussian":
        tau = family.obs_precision(theta)
        ll = 0.5 * np.log(tau / (2.0 * np.pi)) - 0.5 * tau * (y - eta) ** 2
        g = tau * (y - eta)
        h = np.full_like(eta, -tau)
    elif family.kind == "poisson":
        lam = eta + family.offset[:, None]
        mu_rate = np.exp(lam)
        ll = y * lam - mu_rate - gammaln(y + 1.0)
        g = y - mu_rate
        h = -mu_rate
    else:
        s = family.trials[:, None]
        p = _sigmoid(eta)
        ll = y * eta - s * np.logaddexp(0.0, eta) \
            + gammaln(s + 1.0) - gammaln(y + 1.0) - gammaln(s - y + 1.0)
        g = y - s * p
        h = -s * p * (1.0 - p)
    return ll @ w, g @ w, h @ w
