"""Hyperparameter posterior: evaluation, mode search, Hessian, and the
weighted integration grid.

log pi(theta|y) is evaluated by dividing the joint at the inner mode by the
Gaussian approximation at its own mean; the mode is found with a BFGS ascent
driven by central differences taken along an orthonormal basis built from
previous accepted steps (falling back to canonical axes).
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, LgmError
from .families import Family
from .inner import ClassicProblem, InnerResult, ModernProblem, _newton
from .model import DesignMatrix, LatentModel

GRAD_H = 5e-3
HESS_H = 1e-2
MODE_GRAD_TOL = 1e-4
MODE_STEP_TOL = 1e-6
MODE_MAX_ITER = 50
DELTA_Z = 0.75
LOG_DROP = 2.5
MAX_GRID_POINTS = 512


class ThetaPosterior:
    """Evaluates log pi~(theta|y) for one model, caching by theta."""

    def __init__(self, model: LatentModel, design: DesignMatrix, family: Family,
                 *, mode: str = "modern", tau_noise: float | None = None,
                 order="amd"):
        self.model = model
        self.design = design
        self.family = family
        if mode == "modern":
            self.problem = ModernProblem(model, design, family)
        elif mode == "classic":
            kwargs = {} if tau_noise is None else {"tau_noise": tau_noise}
            self.problem = ClassicProblem(model, design, family, **kwargs)
        else:
            raise LgmError(f"unknown inner mode {mode!r}")
        self.mode_kind = mode
        self.order = order
        # bounded: evicted inners stay alive only while a grid point holds them
        self._cache: OrderedDict[bytes, tuple[float, InnerResult]] = OrderedDict()
        self._cache_max = 16
        self._warm: np.ndarray | None = None
        self.n_eval = 0

    def evaluate(self, theta, warm=None) -> tuple[float, InnerResult]:
        """(log posterior value, inner result) at theta; cached."""
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        start = warm if warm is not None else self._warm
        inner = _newton(self.problem, theta, start, order=self.order)
        self.n_eval += 1
        lp = (self.model.theta_log_prior(theta)
              + 0.5 * inner.prior_logdet - 0.5 * inner.prior_quad
              + inner.loglik_at_mode
              - 0.5 * inner.logdet_QX)
        out = (float(lp), inner)
        self._cache[key] = out
        if len(self._cache) > self._cache_max:
            self._cache.popitem(last=False)
        self._warm = inner.mu
        return out

    def log_post(self, theta) -> float:
        return self.evaluate(theta)[0]


def log_post_theta(model: LatentModel, design: DesignMatrix, family: Family,
                   theta, **kwargs) -> tuple[float, InnerResult]:
    """One-shot evaluation of the hyperparameter log posterior."""
    return ThetaPosterior(model, design, family, **kwargs).evaluate(theta)


class GradientBasis:
    """Orthonormal q x q basis tracking up to q previous step directions.

    Directions enter newest-first through modified Gram-Schmidt; the basis is
    completed with canonical axes.  Empty history gives the identity."""

    def __init__(self, q: int):
        self.q = int(q)
        self.history: deque[np.ndarray] = deque(maxlen=max(self.q, 1))
        self._matrix: np.ndarray | None = np.eye(self.q)

    def update(self, delta) -> None:
        delta = np.asarray(delta, dtype=float)
        nrm = float(np.linalg.norm(delta))
        if nrm <= 0 or not np.isfinite(nrm):
            return
        self.history.appendleft(delta / nrm)
        self._matrix = None

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = self._build()
        return self._matrix

    def _build(self) -> np.ndarray:
        q = self.q
        cols: list[np.ndarray] = []
        for d in list(self.history) + [e for e in np.eye(q)]:
            v = d.copy()
            for u in cols:
                v -= (u @ v) * u
            n1 = float(np.linalg.norm(v))
            if n1 > 1e-10:
                v /= n1
                # second MGS pass for orthogonality at 1e-12
                for u in cols:
                    v -= (u @ v) * u
                v /= float(np.linalg.norm(v))
                cols.append(v)
            if len(cols) == q:
                break
        return np.column_stack(cols) if cols else np.eye(q)


def smart_gradient(f, theta, basis: GradientBasis | None = None,
                   h: float = GRAD_H) -> np.ndarray:
    """Central differences along the basis columns, mapped back by G."""
    theta = np.asarray(theta, dtype=float)
    q = theta.shape[0]
    if q == 0:
        return np.zeros(0)
    G = basis.matrix() if basis is not None else np.eye(q)
    ge = np.empty(q)
    for i in range(q):
        step = h * G[:, i]
        ge[i] = (f(theta + step) - f(theta - step)) / (2.0 * h)
    return G @ ge


@dataclass
class ModeResult:
    theta: np.ndarray
    log_post: float
    inner: InnerResult
    basis: GradientBasis
    iterations: int
    n_eval: int
    converged: bool


def find_mode(posterior: ThetaPosterior, theta0=None, *,
              max_iter: int = MODE_MAX_ITER, grad_h: float = GRAD_H) -> ModeResult:
    """BFGS ascent on log pi~(theta|y) with smart gradients."""
    q = posterior.model.q
    theta0 = np.zeros(q) if theta0 is None else np.asarray(theta0, dtype=float)
    if theta0.shape != (q,):
        raise LgmError("theta0 length mismatch")
    basis = GradientBasis(q)
    if q == 0:
        lp, inner = posterior.evaluate(theta0)
        return ModeResult(theta0, lp, inner, basis, 0, posterior.n_eval, True)

    f = posterior.log_post
    x = theta0.copy()
    fx = f(x)
    if not np.isfinite(fx):
        raise FitError("log posterior not finite at the start value")
    g = -smart_gradient(f, x, basis, grad_h)   # gradient of -f
    B = np.eye(q)                              # inverse-Hessian approx of -f
    converged = False
    iterations = 0
    first_update = True
    for it in range(1, max_iter + 1):
        iterations = it
        if np.max(np.abs(g)) < MODE_GRAD_TOL:
            converged = True
            break
        d = -(B @ g)
        if d @ g >= 0:
            d = -g
        alpha = 1.0
        accepted = None
        gd = g @ d
        for _ in range(13):
            cand = x + alpha * d
            fc = f(cand)
            if np.isfinite(fc) and -fc <= -fx + 1e-4 * alpha * gd:
                accepted = (cand, fc)
                break
            alpha *= 0.5
        if accepted is None:
            break
        s = alpha * d
        x_new, fx_new = accepted
        basis.update(s)
        g_new = -smart_gradient(f, x_new, basis, grad_h)
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first_update:
                B *= sy / float(yv @ yv)
                first_update = False
            rho = 1.0 / sy
            I = np.eye(q)
            V = I - rho * np.outer(s, yv)
            B = V @ B @ V.T + rho * np.outer(s, s)
        step_inf = float(np.max(np.abs(s)))
        x, fx, g = x_new, fx_new, g_new
        if step_inf < MODE_STEP_TOL:
            converged = True
            break
    lp, inner = posterior.evaluate(x)
    return ModeResult(x, lp, inner, basis, iterations, posterior.n_eval, converged)


@dataclass
class ThetaPoint:
    theta: np.ndarray
    z: tuple[int, ...]
    log_post: float
    weight: float
    inner: InnerResult


@dataclass
class HyperGrid:
    theta_star: np.ndarray
    hessian: np.ndarray | None
    V: np.ndarray | None
    lam: np.ndarray | None       # eigenvalues of H^{-1} (covariance scale)
    points: list[ThetaPoint] = field(default_factory=list)
    skipped: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.points])

    def theta_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Grid-weighted mean and sd of theta."""
        if not self.points:
            raise FitError("empty grid")
        T = np.stack([p.theta for p in self.points])
        w = self.weights
        mean = w @ T
        var = w @ (T - mean) ** 2
        return mean, np.sqrt(np.maximum(var, 0.0))


def _neighbor_offsets(q: int) -> list[tuple[int, ...]]:
    if q <= 2:
        grids = np.stack(np.meshgrid(*([[-1, 0, 1]] * q), indexing="ij"),
                         axis=-1).reshape(-1, q)
        offs = [tuple(int(v) for v in row) for row in grids
                if any(v != 0 for v in row)]
        return sorted(offs)
    offs = []
    for i in range(q):
        for s in (-1, 1):
            o = [0] * q
            o[i] = s
            offs.append(tuple(o))
    return sorted(offs)


def hessian_and_grid(posterior: ThetaPosterior, mode: ModeResult, *,
                     dz: float = DELTA_Z, drop: float = LOG_DROP,
                     hess_h: float = HESS_H, strategy: str = "grid",
                     warnings_out: list[str] | None = None) -> HyperGrid:
    """Central-difference Hessian at the mode + weighted BFS lattice grid."""
    q = posterior.model.q
    theta_star = mode.theta
    lp0 = mode.log_post
    if q == 0 or strategy == "eb":
        pt = ThetaPoint(theta_star, (0,) * q, lp0, 1.0, mode.inner)
        return HyperGrid(theta_star, None, None, None, [pt])
    if strategy != "grid":
        raise LgmError(f"unknown integration strategy {strategy!r}")

    f = posterior.log_post
    G = mode.basis.matrix()
    h = hess_h
    Hpsi = np.empty((q, q))
    for i in range(q):
        fp = f(theta_star + h * G[:, i])
        fm = f(theta_star - h * G[:, i])
        Hpsi[i, i] = (fp + fm - 2.0 * lp0) / (h * h)
    for i in range(q):
        for j in range(i + 1, q):
            ei = h * G[:, i]
            ej = h * G[:, j]
            fpp = f(theta_star + ei + ej)
            fpm = f(theta_star + ei - ej)
            fmp = f(theta_star - ei + ej)
            fmm = f(theta_star - ei - ej)
            Hpsi[i, j] = Hpsi[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    H = -(G @ Hpsi @ G.T)            # precision of theta at the mode
    H = 0.5 * (H + H.T)
    lamH, V = np.linalg.eigh(H)
    top = float(lamH.max())
    floor = 1e-6 * top if top > 0 else 1.0
    lamH = np.maximum(lamH, floor)
    H = V @ np.diag(lamH) @ V.T
    lam = 1.0 / lamH                 # covariance eigenvalues
    sd_axes = np.sqrt(lam)

    offsets = _neighbor_offsets(q)
    skipped = 0

    def theta_of(z: tuple[int, ...]) -> np.ndarray:
        return theta_star + V @ (sd_axes * (dz * np.asarray(z, dtype=float)))

    kept: dict[tuple[int, ...], tuple[float, InnerResult]] = {
        (0,) * q: (lp0, mode.inner)}
    rejected: set[tuple[int, ...]] = set()
    order_list: list[tuple[int, ...]] = [(0,) * q]
    frontier: deque[tuple[int, ...]] = deque([(0,) * q])
    warm = mode.inner.mu
    while frontier:
        base = frontier.popleft()
        for off in offsets:
            z = tuple(b + o for b, o in zip(base, off))
            if z in kept or z in rejected:
                continue
            if len(kept) >= MAX_GRID_POINTS:
                rejected.add(z)
                continue
            th = theta_of(z)
            try:
                lp, inner = posterior.evaluate(th, warm=warm)
            except LgmError as exc:
                skipped += 1
                rejected.add(z)
                if warnings_out is not None:
                    warnings_out.append(f"grid point {z} skipped: {exc}")
                continue
            if lp0 - lp <= drop:
                kept[z] = (lp, inner)
                order_list.append(z)
                frontier.append(z)
            else:
                rejected.add(z)

    raw = np.array([np.exp(kept[z][0] - lp0) for z in order_list])
    w = raw / raw.sum()
    points = [ThetaPoint(theta_of(z) if z != (0,) * q else theta_star, z,
                         kept[z][0], float(wk), kept[z][1])
              for z, wk in zip(order_list, w)]
    return HyperGrid(theta_star, H, V, lam, points, skipped)
