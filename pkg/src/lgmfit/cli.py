"""Command-line front end.

Verbs:
  fit        fit a model file to a CSV and write summary tables
  simulate   generate a synthetic dataset (plus its model file)
  benchmark  time the solver paths or the raw kernels
  oracle     slow reference posterior for cross-checking a fit

`fit` exits 0 only when every convergence flag in the run report is set;
a finished-but-unconverged run exits 3 so scripts can tell the difference.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np
import pandas as pd

from . import coxph, modelspec, oracle, simulate
from .errors import LgmError
from .fit import FitConfig, FitResult, fit
from .model import build_model
from .posterior import Summaries

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3


def _write_summaries(path: str, summ: Summaries, label: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([label, "mean", "sd", "q025", "q50", "q975"])
        names = summ.names
        for j in range(len(summ)):
            name = names[j] if names is not None else j
            w.writerow([name, repr(float(summ.mean[j])),
                        repr(float(summ.sd[j])), repr(float(summ.q025[j])),
                        repr(float(summ.q50[j])), repr(float(summ.q975[j]))])


def _write_fit_outputs(out_dir: str, res: FitResult):
    os.makedirs(out_dir, exist_ok=True)
    _write_summaries(os.path.join(out_dir, "latent.csv"), res.latent, "name")
    _write_summaries(os.path.join(out_dir, "linpred.csv"), res.linpred, "row")
    with open(os.path.join(out_dir, "hyper.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "mode", "mean", "sd"])
        for name, mode_v, mean_v, sd_v in res.hyper.rows():
            w.writerow([name, repr(mode_v), repr(mean_v), repr(sd_v)])
    with open(os.path.join(out_dir, "report.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(res.report.to_text())


def _parse_floats(text: str | None):
    if text is None:
        return None
    return np.array([float(tok) for tok in text.split(",") if tok.strip()])


def _parse_ints(text: str | None):
    if text is None:
        return None
    return np.array([int(tok) for tok in text.split(",") if tok.strip()],
                    dtype=np.int64)


def _cmd_fit(args) -> int:
    desc = modelspec.load(args.model)
    data = pd.read_csv(args.data)
    config = FitConfig(
        strategy=args.strategy, int_strategy=args.int_strategy,
        mode=args.mode, threads=args.threads, seed=args.seed,
        n_gh=args.n_gh, vb_nodes=_parse_ints(args.vb_nodes),
        order=args.order, tau_noise=args.tau_noise,
        theta0=_parse_floats(args.theta0))
    res = fit(desc, data, config)
    _write_fit_outputs(args.out, res)
    rep = res.report
    print(f"n={rep.n} m={rep.m} q={rep.q} mode={rep.mode} "
          f"strategy={rep.strategy}/{rep.int_strategy} "
          f"grid={rep.grid_size} backend={rep.backend}")
    for phase, sec in rep.timings.items():
        print(f"  {phase:<10s} {sec:8.3f}s")
    for wmsg in rep.warnings:
        print(f"  warning: {wmsg}")
    print(f"converged={'yes' if rep.all_converged else 'NO'} "
          f"-> {args.out}/latent.csv linpred.csv hyper.csv report.txt")
    return EXIT_OK if rep.all_converged else EXIT_NOT_CONVERGED


def _cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "cox":
        times, events, x = coxph.simulate_cox(
            args.n, beta=args.beta, seed=args.seed, horizon=args.horizon)
        raw = pd.DataFrame({"time": times, "event": events, "x": x})
        raw.to_csv(os.path.join(args.out, "survival.csv"), index=False)
        bins = coxph.make_bins(times, B=args.bins)
        aug = coxph.augment(times, events, {"x": x}, bins)
        desc = aug.description(args.baseline)
        data = aug.data
        truth = {"beta_x": np.array([args.beta])}
    elif args.kind == "irt":
        data, truth = simulate.simulate_irt(
            args.students, args.items, seed=args.seed,
            discrimination=args.discrimination)
        desc = simulate.irt_description()
    elif args.kind == "glm":
        data, truth = simulate.simulate_glm(
            args.n, family=args.family, seed=args.seed,
            intercept=args.intercept, slope=args.slope)
        desc = simulate.glm_description(args.family)
    else:
        raise LgmError(f"unknown kind {args.kind!r}")
    data_path, truth_path = simulate.write_dataset(args.out, data, truth)
    model_path = os.path.join(args.out, "model.txt")
    modelspec.save(desc, model_path)
    print(f"wrote {data_path} ({data.shape[0]} rows), {truth_path}, "
          f"{model_path}")
    return EXIT_OK


def _bench_kernels(args, rows: list[dict]):
    from .sparse import kernels
    from .sparse.chol import factorize, selected_inverse
    from .sparse.pattern import SparseSym

    backends = ["python"] + (["compiled"] if kernels.HAVE_COMPILED else [])
    if not kernels.HAVE_COMPILED:
        print("compiled kernels unavailable; timing python only")
    sizes = args.sizes or [2000, 8000]
    for n in sizes:
        rng = np.random.default_rng(args.seed)
        # second-difference band plus random off-band fill; each extra entry
        # is matched on the diagonal so the matrix stays diagonally dominant
        ii = np.arange(n)
        rows_l = [ii, ii[1:], ii[2:]]
        cols_l = [ii, ii[1:] - 1, ii[2:] - 2]
        vals_l = [np.full(n, 6.0), np.full(n - 1, -4.0), np.full(n - 2, 1.0)]
        extra = max(n // 10, 1)
        er = rng.integers(1, n, size=extra)
        ec = (er - rng.integers(1, np.minimum(er, 40) + 1)).astype(np.int64)
        ev = np.full(extra, 1e-3)
        rows_l += [er, er, ec]
        cols_l += [ec, er, ec]
        vals_l += [ev, np.abs(ev), np.abs(ev)]
        Q = SparseSym.from_triplets(
            n, np.concatenate(rows_l), np.concatenate(cols_l),
            np.concatenate(vals_l))
        for name in backends:
            backend = kernels.get_backend(name)
            t0 = time.perf_counter()
            fac = factorize(Q, backend=backend)
            t_f = time.perf_counter() - t0
            rhs = rng.normal(size=n)
            t0 = time.perf_counter()
            for _ in range(5):
                fac.solve(rhs)
            t_s = (time.perf_counter() - t0) / 5
            t0 = time.perf_counter()
            selected_inverse(fac)
            t_i = time.perf_counter() - t0
            rows.append({"suite": "kernels", "case": f"n={n}",
                         "variant": name, "seconds": t_f,
                         "solve_s": t_s, "selinv_s": t_i, "status": "ok"})
            print(f"  n={n:<7d} {name:<9s} factor {t_f*1e3:8.1f} ms   "
                  f"solve {t_s*1e3:7.2f} ms   selinv {t_i*1e3:8.1f} ms")


def _bench_fits(args, rows: list[dict]):
    suite = args.suite
    sizes = args.sizes or {"cox": [1000, 4000], "irt": [100, 200],
                           "glm": [1000, 10000]}[suite]
    for size in sizes:
        if suite == "cox":
            times, events, x = coxph.simulate_cox(size, seed=args.seed)
            bins = coxph.make_bins(times, B=50)
            aug = coxph.augment(times, events, {"x": x}, bins)
            desc, data = aug.description("rw1"), aug.data
        elif suite == "irt":
            data, _ = simulate.simulate_irt(size, 20, seed=args.seed)
            desc = simulate.irt_description()
        else:
            data, _ = simulate.simulate_glm(size, "poisson", seed=args.seed)
            desc = simulate.glm_description("poisson")
        for mode in args.modes.split(","):
            t0 = time.perf_counter()
            try:
                res = fit(desc, data, FitConfig(strategy="gaussian",
                                                mode=mode,
                                                threads=args.threads))
                sec = time.perf_counter() - t0
                status = "ok" if res.report.all_converged else "not-converged"
                dim = res.report.latent_dim
            except LgmError as exc:
                sec = time.perf_counter() - t0
                status = f"failed: {exc}"
                dim = -1
            rows.append({"suite": suite, "case": f"size={size}",
                         "variant": mode, "seconds": sec,
                         "latent_dim": dim, "status": status})
            print(f"  {suite} size={size:<7d} {mode:<8s} {sec:8.2f}s  "
                  f"dim={dim:<8d} {status}")


def _cmd_benchmark(args) -> int:
    rows: list[dict] = []
    if args.suite == "kernels":
        _bench_kernels(args, rows)
    else:
        _bench_fits(args, rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"benchmark_{args.suite}.csv")
        keys: list[str] = []
        for r in rows:
            keys.extend(k for k in r if k not in keys)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    desc = modelspec.load(args.model)
    data = pd.read_csv(args.data)
    model, design, family = build_model(desc, data)
    theta = _parse_floats(args.theta)
    names = model.latent_names()
    if theta is None and model.q:
        names = names + [h.name for h in model.hypers]
    if args.method == "quadrature":
        res = oracle.quadrature_posterior(model, design, family, theta=theta)
    elif args.method == "metropolis":
        res = oracle.metropolis(model, design, family, draws=args.draws,
                                seed=args.seed, theta=theta)
    elif args.method == "dense":
        if family.kind != "gaussian":
            raise LgmError("dense oracle needs a gaussian family")
        th = theta if theta is not None else np.zeros(model.q)
        tau = float(np.exp(th[family.obs_prec_index]))
        Q0 = model.prior_precision(th).to_dense()
        A = design.mat.toarray()
        Qx = Q0 + tau * A.T @ A
        cov = oracle.dense_reference(Qx)
        mu = cov @ (tau * (A.T @ family.y))
        res = oracle.OracleResult(means=mu, sds=np.sqrt(np.diag(cov)),
                                  meta={"theta": th.tolist()})
    else:
        raise LgmError(f"unknown oracle method {args.method!r}")
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "oracle.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = ["name", "mean", "sd"]
        if res.mcse is not None:
            header.append("mcse")
        w.writerow(header)
        for j in range(res.means.shape[0]):
            name = names[j] if j < len(names) else j
            row = [name, repr(float(res.means[j])), repr(float(res.sds[j]))]
            if res.mcse is not None:
                row.append(repr(float(res.mcse[j])))
            w.writerow(row)
    for k, v in res.meta.items():
        print(f"{k}: {v}")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lgmfit",
        description="Latent Gaussian model fitting with nested Laplace "
                    "approximations")
    sub = p.add_subparsers(dest="verb", required=True)

    pf = sub.add_parser("fit", help="fit a model file to a CSV dataset")
    pf.add_argument("--model", required=True)
    pf.add_argument("--data", required=True)
    pf.add_argument("--out", required=True)
    pf.add_argument("--strategy", choices=["gaussian", "vb"], default="vb")
    pf.add_argument("--int-strategy", choices=["grid", "eb"],
                    default="grid")
    pf.add_argument("--mode", choices=["modern", "classic"],
                    default="modern")
    pf.add_argument("--threads", type=int, default=1)
    pf.add_argument("--seed", type=int, default=0)
    pf.add_argument("--n-gh", type=int, default=None)
    pf.add_argument("--vb-nodes", default=None,
                    help="comma-separated latent indices")
    pf.add_argument("--order", choices=["amd", "natural"], default="amd")
    pf.add_argument("--tau-noise", type=float, default=None)
    pf.add_argument("--theta0", default=None,
                    help="comma-separated starting hyperparameters")
    pf.set_defaults(func=_cmd_fit)

    ps = sub.add_parser("simulate", help="generate a synthetic dataset")
    ps.add_argument("--kind", choices=["cox", "irt", "glm"], required=True)
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--n", type=int, default=1000)
    ps.add_argument("--beta", type=float, default=coxph.COX_BETA_TRUE)
    ps.add_argument("--horizon", type=float, default=None)
    ps.add_argument("--bins", type=int, default=coxph.DEFAULT_BINS)
    ps.add_argument("--baseline", choices=["rw1", "rw2"], default="rw1")
    ps.add_argument("--students", type=int, default=100)
    ps.add_argument("--items", type=int, default=20)
    ps.add_argument("--discrimination", choices=["rasch", "gamma"],
                    default="rasch")
    ps.add_argument("--family",
                    choices=["poisson", "bernoulli", "gaussian"],
                    default="poisson")
    ps.add_argument("--intercept", type=float, default=0.5)
    ps.add_argument("--slope", type=float, default=0.3)
    ps.set_defaults(func=_cmd_simulate)

    pb = sub.add_parser("benchmark", help="time fits or raw kernels")
    pb.add_argument("--suite", choices=["kernels", "cox", "irt", "glm"],
                    required=True)
    pb.add_argument("--sizes", type=lambda s: [int(t) for t in s.split(",")],
                    default=None)
    pb.add_argument("--modes", default="modern,classic",
                    help="comma-separated fit modes")
    pb.add_argument("--threads", type=int, default=1)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--out", default=None)
    pb.set_defaults(func=_cmd_benchmark)

    po = sub.add_parser("oracle", help="brute-force reference posterior")
    po.add_argument("--method",
                    choices=["quadrature", "metropolis", "dense"],
                    required=True)
    po.add_argument("--model", required=True)
    po.add_argument("--data", required=True)
    po.add_argument("--out", required=True)
    po.add_argument("--draws", type=int, default=200000)
    po.add_argument("--seed", type=int, default=0)
    po.add_argument("--theta", default=None,
                    help="fix the hyperparameters (comma-separated)")
    po.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LgmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
