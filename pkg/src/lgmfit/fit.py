"""End-to-end fitting: mode search, grid, marginals, corrections.

The phases run in a fixed order and the per-grid-point work is pure, so
results are bit-identical for any thread count; threads only shorten the
wall clock of the posterior pass.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import LgmError
from .model import build_model
from .outer import ThetaPosterior, find_mode, hessian_and_grid
from .posterior import (LinpredPlan, Summaries, default_vb_nodes,
                        latent_marginals, linpred_marginals, summarize,
                        vb_correct)
from .sparse import kernels
from .sparse.chol import selected_inverse

STRATEGIES = ("gaussian", "vb")
INT_STRATEGIES = ("grid", "eb")
MODES = ("modern", "classic")


@dataclass
class FitConfig:
    strategy: str = "vb"
    int_strategy: str = "grid"
    mode: str = "modern"
    threads: int = 1
    seed: int = 0
    n_gh: int | None = None
    vb_nodes: np.ndarray | None = None
    order: str = "amd"
    tau_noise: float | None = None
    theta0: np.ndarray | None = None
    dz: float | None = None
    drop: float | None = None

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise LgmError(f"unknown strategy {self.strategy!r}")
        if self.int_strategy not in INT_STRATEGIES:
            raise LgmError(f"unknown integration strategy "
                           f"{self.int_strategy!r}")
        if self.mode not in MODES:
            raise LgmError(f"unknown mode {self.mode!r}")
        if self.threads < 1:
            raise LgmError("threads must be >= 1")


@dataclass
class HyperSummary:
    names: list[str]
    mode: np.ndarray
    mean: np.ndarray
    sd: np.ndarray

    def rows(self):
        for j, name in enumerate(self.names):
            yield (name, float(self.mode[j]), float(self.mean[j]),
                   float(self.sd[j]))


@dataclass
class RunReport:
    n: int
    m: int
    q: int
    latent_dim: int
    mode: str
    strategy: str
    int_strategy: str
    backend: str
    threads: int
    grid_size: int = 0
    grid_skipped: int = 0
    mode_iterations: int = 0
    n_eval: int = 0
    mode_converged: bool = False
    inner_converged: bool = False
    vb_converged: bool = True
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return bool(self.mode_converged and self.inner_converged
                    and self.vb_converged)

    def to_text(self) -> str:
        lines = []
        for key in ("n", "m", "q", "latent_dim", "mode", "strategy",
                    "int_strategy", "backend", "threads", "grid_size",
                    "grid_skipped", "mode_iterations", "n_eval"):
            lines.append(f"{key} {getattr(self, key)}")
        for key in ("mode_converged", "inner_converged", "vb_converged"):
            lines.append(f"{key} {int(getattr(self, key))}")
        lines.append(f"all_converged {int(self.all_converged)}")
        for phase, sec in self.timings.items():
            lines.append(f"time_{phase} {sec:.6f}")
        for w in self.warnings:
            lines.append(f"warning {w}")
        return "\n".join(lines) + "\n"


@dataclass
class FitResult:
    latent: Summaries
    linpred: Summaries
    hyper: HyperSummary
    report: RunReport
    grid: object
    mode_result: object
    corrected: np.ndarray | None
    model: object
    design: object
    family: object
    config: FitConfig


def fit(desc, data, config: FitConfig | None = None) -> FitResult:
    config = config or FitConfig()
    config.validate()
    warns: list[str] = []

    t0 = time.perf_counter()
    model, design, family = build_model(desc, data)
    t_build = time.perf_counter() - t0

    strategy = config.strategy
    if config.mode == "classic" and strategy == "vb":
        warns.append("classic mode has no mean correction; "
                     "using the gaussian strategy")
        strategy = "gaussian"

    post = ThetaPosterior(model, design, family, mode=config.mode,
                          tau_noise=config.tau_noise, order=config.order)
    t0 = time.perf_counter()
    mode_res = find_mode(post, config.theta0)
    t_mode = time.perf_counter() - t0

    grid_kwargs = {}
    if config.dz is not None:
        grid_kwargs["dz"] = config.dz
    if config.drop is not None:
        grid_kwargs["drop"] = config.drop
    t0 = time.perf_counter()
    grid = hessian_and_grid(post, mode_res, strategy=config.int_strategy,
                            warnings_out=warns, **grid_kwargs)
    t_grid = time.perf_counter() - t0

    K = len(grid.points)
    corrected = None
    vb_flags = [True] * K
    t0 = time.perf_counter()
    if config.mode == "modern":
        plan = LinpredPlan(design, grid.points[0].inner.factor.symbolic)
        if strategy == "vb":
            nodes = (default_vb_nodes(model) if config.vb_nodes is None
                     else np.asarray(config.vb_nodes, dtype=np.int64))
            corrected = np.empty((K, model.m))

            def correct_point(k: int) -> bool:
                pt = grid.points[k]
                sel = selected_inverse(pt.inner.factor)
                sigma = np.sqrt(plan.variances(sel))
                mu_k, info = vb_correct(
                    pt.inner, nodes, model, design, family, pt.theta,
                    sigma_eta=sigma, n_j=config.n_gh)
                corrected[k] = mu_k
                return info.converged

            if config.threads > 1 and K > 1:
                with ThreadPoolExecutor(max_workers=config.threads) as pool:
                    vb_flags = list(pool.map(correct_point, range(K)))
            else:
                vb_flags = [correct_point(k) for k in range(K)]
        else:
            # warm the per-point selected inverses (threadable, pure)
            if config.threads > 1 and K > 1:
                with ThreadPoolExecutor(max_workers=config.threads) as pool:
                    list(pool.map(
                        lambda k: selected_inverse(
                            grid.points[k].inner.factor), range(K)))
    t_post = time.perf_counter() - t0

    t0 = time.perf_counter()
    if config.mode == "modern":
        lat_mix = latent_marginals(grid, corrected)
        lin_mix = linpred_marginals(grid, design, corrected)
    else:
        n = family.y.shape[0]
        full_mix = latent_marginals(grid)
        lin_mix = full_mix.select(np.arange(n))
        lat_mix = full_mix.select(np.arange(n, n + model.m))
    latent = summarize(lat_mix, names=model.latent_names())
    linpred = summarize(lin_mix)
    if model.q:
        th_mean, th_sd = grid.theta_moments()
    else:
        th_mean = np.zeros(0)
        th_sd = np.zeros(0)
    hyper = HyperSummary([h.name for h in model.hypers],
                         mode_res.theta.copy(), th_mean, th_sd)
    t_marg = time.perf_counter() - t0

    report = RunReport(
        n=family.y.shape[0], m=model.m, q=model.q,
        latent_dim=grid.points[0].inner.dim,
        mode=config.mode, strategy=strategy,
        int_strategy=config.int_strategy,
        backend=kernels.DEFAULT.NAME, threads=config.threads,
        grid_size=K, grid_skipped=grid.skipped,
        mode_iterations=mode_res.iterations, n_eval=post.n_eval,
        mode_converged=mode_res.converged,
        inner_converged=all(p.inner.converged for p in grid.points),
        vb_converged=all(vb_flags),
        timings={"build": t_build, "mode": t_mode, "grid": t_grid,
                 "post": t_post, "marginals": t_marg},
        warnings=warns)
    return FitResult(latent=latent, linpred=linpred, hyper=hyper,
                     report=report, grid=grid, mode_result=mode_res,
                     corrected=corrected, model=model, design=design,
                     family=family, config=config)
