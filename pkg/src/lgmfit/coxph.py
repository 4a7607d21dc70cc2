"""Cox proportional-hazards front-end.

Survival data with a piecewise log-constant baseline hazard is equivalent to
a Poisson regression on augmented rows: subject i with event time in bin k
contributes k rows, one per visited bin, with the bin exposure as a Poisson
offset.  The baseline log-hazard rides on a random-walk component over the
bin index; a global intercept carries the level, so the walk is constrained
to sum to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError, LgmError
from .modelspec import ComponentDecl, ModelDescription

DEFAULT_BINS = 50
WEIBULL_SHAPE = 1.2
COX_BETA_TRUE = 0.1


@dataclass
class BinGrid:
    """Cut points 0 = s_1 < ... < s_{B+1} covering the observed times."""

    cuts: np.ndarray

    def __post_init__(self):
        self.cuts = np.asarray(self.cuts, dtype=float)
        if self.cuts.ndim != 1 or self.cuts.shape[0] < 2:
            raise LgmError("need at least two cut points")
        if self.cuts[0] != 0.0:
            raise LgmError("first cut point must be 0")
        if not (np.diff(self.cuts) > 0).all():
            raise LgmError("cut points must be strictly increasing")

    @property
    def B(self) -> int:
        return self.cuts.shape[0] - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.cuts)

    def bin_of(self, times: np.ndarray) -> np.ndarray:
        """0-based bin index; boundary times fall in the lower bin."""
        t = np.asarray(times, dtype=float)
        if (t <= 0).any():
            raise DataError("times must be positive")
        if (t > self.cuts[-1]).any():
            raise DataError("time outside the bin grid")
        return np.searchsorted(self.cuts, t, side="left") - 1


def make_bins(times, B: int = DEFAULT_BINS, *, mode: str = "width",
              horizon: float | None = None) -> BinGrid:
    """Equal-width (default) or quantile cut points on [0, max time]."""
    t = np.asarray(times, dtype=float)
    if t.size == 0:
        raise DataError("no times given")
    if (t <= 0).any() or not np.isfinite(t).all():
        raise DataError("times must be positive and finite")
    if B < 1:
        raise LgmError("need B >= 1 bins")
    top = float(t.max()) if horizon is None else float(horizon)
    if top < float(t.max()):
        raise LgmError("horizon below the largest observed time")
    if mode == "width":
        cuts = np.linspace(0.0, top, B + 1)
    elif mode == "quantile":
        cuts = np.quantile(t, np.linspace(0.0, 1.0, B + 1))
        cuts[0] = 0.0
        cuts[-1] = top
        if not (np.diff(cuts) > 0).all():
            raise LgmError("quantile cuts collapsed; use fewer bins")
    else:
        raise LgmError(f"unknown bin mode {mode!r}")
    return BinGrid(cuts)


@dataclass
class AugmentedData:
    """Poisson-augmented survival rows plus the originating grid."""

    data: pd.DataFrame          # y, exposure, bin, subject + covariates
    bins: BinGrid
    covariates: list[str]
    dropped: int = 0

    @property
    def n_rows(self) -> int:
        return int(self.data.shape[0])

    def total_exposure(self) -> float:
        return float(self.data["exposure"].sum())

    def description(self, baseline: str = "rw1",
                    family_extra: dict | None = None) -> ModelDescription:
        """Model description: intercept + constrained scaled walk on the bin
        index + linear terms for each covariate."""
        if baseline not in ("rw1", "rw2"):
            raise LgmError("baseline must be rw1 or rw2")
        comps = [ComponentDecl(kind="intercept")]
        comps.append(ComponentDecl(kind=baseline, column="bin",
                                   size=self.bins.B, scaled=True,
                                   constrained=True))
        comps.extend(ComponentDecl(kind="linear", column=c)
                     for c in self.covariates)
        return ModelDescription(
            family="poisson", response="y", exposure="exposure",
            components=comps, **(family_extra or {}))


def augment(times, events, covariates, bins: BinGrid,
            warnings_out: list[str] | None = None) -> AugmentedData:
    """Expand survival records into Poisson rows over visited bins."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(events)
    n = t.shape[0]
    if d.shape != (n,):
        raise LgmError("times/events length mismatch")
    if not np.isin(d, (0, 1)).all():
        raise DataError("events must be 0/1")
    cov = {}
    if covariates is not None:
        for name in getattr(covariates, "columns", covariates.keys()):
            col = np.asarray(covariates[name])
            if col.shape != (n,):
                raise LgmError(f"covariate {name!r} length mismatch")
            cov[name] = col

    kbin = bins.bin_of(t)
    counts = kbin + 1
    total = int(counts.sum())
    subject = np.repeat(np.arange(n), counts)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    within = np.arange(total) - np.repeat(starts, counts)
    last = within == kbin[subject]
    widths = bins.widths
    exposure = np.where(last, t[subject] - bins.cuts[within],
                        widths[np.minimum(within, bins.B - 1)])
    y = (last & (np.asarray(d, dtype=int)[subject] == 1)).astype(float)

    keep = exposure > 0.0
    dropped = int(total - keep.sum())
    if dropped and warnings_out is not None:
        warnings_out.append(f"dropped {dropped} zero-exposure rows "
                            "(event times on bin boundaries)")
    frame = {
        "y": y[keep],
        "exposure": exposure[keep],
        "bin": within[keep].astype(np.int64),
        "subject": subject[keep].astype(np.int64),
    }
    for name, col in cov.items():
        frame[name] = col[subject[keep]]
    return AugmentedData(pd.DataFrame(frame), bins, list(cov.keys()), dropped)


def survival_loglik(times, events, x, beta: float, log_hazard: np.ndarray,
                    bins: BinGrid) -> float:
    """Direct piecewise-exponential survival log-likelihood (test reference).

    log_hazard holds the per-bin baseline log levels b_j."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=float)
    x = np.asarray(x, dtype=float)
    kbin = bins.bin_of(t)
    lam = np.exp(np.asarray(log_hazard, dtype=float))
    total = 0.0
    for i in range(t.shape[0]):
        k = kbin[i]
        lin = beta * x[i]
        if d[i] == 1:
            total += log_hazard[k] + lin
        H = 0.0
        for j in range(k):
            H += lam[j] * (bins.cuts[j + 1] - bins.cuts[j])
        H += lam[k] * (t[i] - bins.cuts[k])
        total -= H * math.exp(lin)
    return total


def simulate_cox(n: int, beta: float = COX_BETA_TRUE, seed: int = 0,
                 horizon: float | None = None):
    """Event times with hazard 1.2 t^0.2 exp(beta x): inversion of the
    cumulative hazard t^1.2 exp(beta x).

    Returns (times, events, x); administrative censoring at `horizon` when
    given, otherwise all events are observed."""
    if n < 1:
        raise LgmError("need n >= 1")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    x = (x - x.mean()) / x.std()
    u = rng.uniform(size=n)
    raw = (-np.log(u) * np.exp(-beta * x)) ** (1.0 / WEIBULL_SHAPE)
    if horizon is None:
        return raw, np.ones(n, dtype=np.int64), x
    times = np.minimum(raw, horizon)
    events = (raw <= horizon).astype(np.int64)
    return times, events, x
