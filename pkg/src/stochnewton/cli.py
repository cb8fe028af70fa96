"""Command-line driver: experiment runs, hyperparameter grids, diagnostics.

Subcommands:
  run <config>           run the methods listed in an INI config, writing
                         per-seed trace CSVs, a comparison summary CSV, and
                         convergence figures next to them
  grid-adagrad <config>  sweep the adaptive baseline's step scale over a
                         fixed 36-point grid and rank the results
  diag <check>           run one randomized diagnostic (or "all"), printing
                         a JSON report; exit status reflects pass/fail
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import statistics
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from stochnewton.baselines import (AdagradConfig, ProxSVRGConfig, adagrad_run,
                                   proxsvrg_run)
from stochnewton.datakit import (SparseDataset, load_libsvm, scale_features,
                                 synth_binary, truncate)
from stochnewton.diagnostics import CHECKS, run_check
from stochnewton.driver import S4NConfig, Trace, s2nd_run, s4n_run
from stochnewton.figures import save_convergence_plot
from stochnewton.model import (LOGISTIC, SIGMOID, CompositeProblem, objective)
from stochnewton.newton import CG, MINRES, NewtonConfig
from stochnewton.oracles import OracleState, power_sequence

METHODS = ("s4n-hg10", "s4n-hg50", "s4n-hg100", "s4n-h", "s4n-vr", "s2n-d",
           "adagrad", "prox-svrg")

SUMMARY_TOLERANCES = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)


@dataclass
class ExperimentConfig:
    """Parsed INI configuration; sections map onto these groups."""

    dataset: dict = field(default_factory=dict)
    loss_kind: str = LOGISTIC
    reg_weight: float = 0.01
    methods: tuple = ("s4n-hg100",)
    seeds: tuple = (0,)
    max_iters: int = 500
    stop_tol: float = 0.0
    check_every: int = 10
    out_dir: str = "results"
    reference_tol: float = 1e-12
    reference_max_iters: int = 500
    with_timing: bool = True
    s4n_overrides: dict = field(default_factory=dict)
    newton_overrides: dict = field(default_factory=dict)
    adagrad_overrides: dict = field(default_factory=dict)
    proxsvrg_overrides: dict = field(default_factory=dict)
    grid_max_iters: int = 200
    grid_seeds: tuple = (0, 1, 2)


def _parse_seeds(raw: str) -> tuple:
    return tuple(int(t) for t in raw.replace(",", " ").split())


def _typed_items(section, casts: dict) -> dict:
    out = {}
    for key, cast in casts.items():
        if key in section:
            if cast is bool:
                out[key] = section.getboolean(key)
            else:
                out[key] = cast(section[key])
    return out


def parse_config(path: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    cfg = ExperimentConfig()

    if cp.has_section("dataset"):
        sec = cp["dataset"]
        cfg.dataset = _typed_items(sec, {
            "source": str, "path": str, "n_features": int, "n_points": int,
            "density": float, "seed": int, "noise": float, "scale": bool,
            "scale_per_feature": bool, "max_points": int, "max_features": int,
        })
    if cp.has_section("problem"):
        sec = cp["problem"]
        if "loss" in sec:
            cfg.loss_kind = sec["loss"].strip().lower()
            if cfg.loss_kind not in (LOGISTIC, SIGMOID):
                raise ValueError(f"unknown loss {cfg.loss_kind!r}")
        if "reg_weight" in sec:
            cfg.reg_weight = sec.getfloat("reg_weight")
    if cp.has_section("experiment"):
        sec = cp["experiment"]
        if "methods" in sec:
            cfg.methods = tuple(m.strip() for m in sec["methods"].split(",") if m.strip())
            for m in cfg.methods:
                if m not in METHODS:
                    raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
        if "seeds" in sec:
            cfg.seeds = _parse_seeds(sec["seeds"])
        elif "n_seeds" in sec:
            cfg.seeds = tuple(range(sec.getint("n_seeds")))
        for key, cast in (("max_iters", sec.getint), ("check_every", sec.getint),
                          ("reference_max_iters", sec.getint)):
            if key in sec:
                setattr(cfg, key, cast(key))
        for key in ("stop_tol", "reference_tol"):
            if key in sec:
                setattr(cfg, key, sec.getfloat(key))
        if "out_dir" in sec:
            cfg.out_dir = sec["out_dir"]
        if "with_timing" in sec:
            cfg.with_timing = sec.getboolean("with_timing")
    if cp.has_section("s4n"):
        cfg.s4n_overrides = _typed_items(cp["s4n"], {
            "eta": float, "p_exp": float, "beta": float, "c_nu": float,
            "q_nu": float, "alpha": float, "check_growth2": bool,
            "theta0": float, "lambda0": float, "lambda_ema": float,
            "count_hess_epochs": bool, "charge_full_residual": bool,
            "force_fallback": bool,
        })
    if cp.has_section("newton"):
        cfg.newton_overrides = _typed_items(cp["newton"], {
            "solver": str, "reg_coeff": float, "cg_tol0": float,
            "cg_maxit0": int, "cg_maxit_total": int, "tol_floor": float,
        })
    if cp.has_section("adagrad"):
        cfg.adagrad_overrides = _typed_items(cp["adagrad"], {
            "step_scale": float, "delta": float, "batch_frac": float,
        })
    if cp.has_section("prox-svrg"):
        cfg.proxsvrg_overrides = _typed_items(cp["prox-svrg"], {
            "batch_frac": float, "m": int, "lambda0": float,
        })
    if cp.has_section("grid"):
        sec = cp["grid"]
        if "max_iters" in sec:
            cfg.grid_max_iters = sec.getint("max_iters")
        if "seeds" in sec:
            cfg.grid_seeds = _parse_seeds(sec["seeds"])
        elif "n_seeds" in sec:
            cfg.grid_seeds = tuple(range(sec.getint("n_seeds")))
    return cfg


def load_dataset(spec: dict) -> SparseDataset:
    source = spec.get("source", "synth" if "path" not in spec else "libsvm")
    if source == "libsvm":
        ds = load_libsvm(spec["path"], n_features=spec.get("n_features"))
    elif source == "synth":
        ds = synth_binary(spec.get("n_points", 2000), spec.get("n_features", 100),
                          density=spec.get("density", 0.2),
                          seed=spec.get("seed", 0), noise=spec.get("noise", 0.0))
    else:
        raise ValueError(f"unknown dataset source {source!r}")
    if spec.get("max_points") or spec.get("max_features"):
        ds = truncate(ds, spec.get("max_points"), spec.get("max_features"))
    if spec.get("scale", False):
        ds = scale_features(ds, per_feature=spec.get("scale_per_feature", True))
    return ds


def method_presets(method: str, loss_kind: str, n_points: int) -> dict:
    """Batch-size schedule and solver settings for each named method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    big_n = n_points
    logistic = loss_kind == LOGISTIC

    def frac(f):
        return max(1, int(f * big_n))

    c_nu = 500.0 if logistic else 2500.0
    newton = {"solver_kind": CG} if logistic else {"solver_kind": MINRES,
                                                   "cg_maxit_total": 32}
    # Sub-sampled curvature can vanish on part of the active set, and the
    # regularizer is then the only thing bounding the direction (|d| stays
    # below reg_coeff^-1 times the residual scale).  Every preset that sees
    # a degenerate Hessian block keeps that bound at 1; only the full-batch
    # logistic reference, whose Hessian is positive definite along the whole
    # path, runs with the loose default.
    if not (logistic and method == "s2n-d"):
        newton["reg_coeff"] = 1.0
    out = {"kind": method, "c_nu": c_nu, "newton": newton, "vr_period": 0}
    if method in ("adagrad", "prox-svrg", "s2n-d"):
        return out

    grad0 = frac(0.01 if logistic else 0.05)
    if logistic:
        hess0 = frac(0.01)
    else:
        hess0 = frac(0.05 if method in ("s4n-hg100", "s4n-h") else 0.025)
    if logistic:
        hess_cap = frac(0.1)
    else:
        hess_cap = frac(0.05 if method == "s4n-hg10" else 0.25)

    oracle = {"grad_size": grad0, "hess_size": hess0, "hess_cap": hess_cap,
              "grad_period": 30, "hess_period": 15}
    if method == "s4n-hg10":
        oracle["grad_cap"] = frac(0.1)
        if logistic:
            # the smallest-cap variant keeps its Hessian batch fixed
            oracle["hess_period"] = 0
            oracle["hess_cap"] = hess0
    elif method == "s4n-hg50":
        oracle["grad_cap"] = frac(0.5)
    elif method == "s4n-hg100":
        oracle["grad_cap"] = big_n
    elif method == "s4n-h":
        oracle.update(grad_size=big_n, grad_cap=big_n, grad_period=0)
    elif method == "s4n-vr":
        oracle.update(grad_cap=grad0, grad_period=0, vr_enabled=True,
                      vr_period=6 if logistic else 8)
        if logistic:
            # The variance-reduced run keeps its small gradient batch for
            # good, so the acceptance envelope must tighten while the run
            # is still in progress or sampling noise recycles forever.
            out["c_nu"] = 2.0
    out["oracle"] = oracle
    return out


def build_s4n_config(cfg: ExperimentConfig, preset: dict) -> S4NConfig:
    ov = dict(cfg.s4n_overrides)
    c_nu = ov.pop("c_nu", preset["c_nu"])
    q_nu = ov.pop("q_nu", 1.1)
    rule = power_sequence(c_nu, q_nu)
    return S4NConfig(nu_rule=rule, eps1_rule=rule,
                     max_iters=cfg.max_iters, stop_tol=cfg.stop_tol,
                     check_every=cfg.check_every, **ov)


def build_newton_config(cfg: ExperimentConfig, preset: dict) -> NewtonConfig:
    kw = dict(preset["newton"])
    ov = dict(cfg.newton_overrides)
    if "solver" in ov:
        kw["solver_kind"] = ov.pop("solver")
    kw.update(ov)
    return NewtonConfig(**kw)


def run_single(p: CompositeProblem, cfg: ExperimentConfig, method: str,
               seed: int) -> Trace:
    preset = method_presets(method, p.loss_kind, p.n_points)
    if method == "adagrad":
        acfg = AdagradConfig(max_iters=cfg.max_iters, stop_tol=cfg.stop_tol,
                             check_every=cfg.check_every, **cfg.adagrad_overrides)
        return adagrad_run(p, acfg, seed=seed)
    if method == "prox-svrg":
        pcfg = ProxSVRGConfig(max_iters=cfg.max_iters, stop_tol=cfg.stop_tol,
                              check_every=cfg.check_every, **cfg.proxsvrg_overrides)
        return proxsvrg_run(p, pcfg, seed=seed)
    scfg = build_s4n_config(cfg, preset)
    ncfg = build_newton_config(cfg, preset)
    if method == "s2n-d":
        scfg = replace(scfg, stop_tol=max(cfg.stop_tol, 1e-12) if cfg.stop_tol else 1e-12)
        return s2nd_run(p, scfg, ncfg)
    big_n = p.n_points
    ok = dict(preset["oracle"])
    oracle = OracleState(n_points=big_n, rng=np.random.default_rng(seed), **ok)
    return s4n_run(p, oracle, scfg, ncfg)


def reference_solution(p: CompositeProblem, cfg: ExperimentConfig,
                       out_dir: str) -> dict:
    """Tight deterministic solve, cached on disk per (dataset, loss, weight)."""
    key_src = f"{p.dataset.content_hash()}|{p.loss_kind}|{p.reg_weight!r}|{p.l2_shift!r}"
    key = hashlib.sha256(key_src.encode()).hexdigest()[:16]
    os.makedirs(out_dir, exist_ok=True)
    cache = os.path.join(out_dir, f"reference_{key}.npz")
    if os.path.exists(cache):
        data = np.load(cache)
        return {"x_star": data["x_star"], "psi_star": float(data["psi_star"]),
                "full_res": float(data["full_res"]), "cached": True}
    scfg = S4NConfig(max_iters=cfg.reference_max_iters, stop_tol=cfg.reference_tol)
    trace = s2nd_run(p, scfg)
    x_star = trace.summary["x_final"]
    out = {"x_star": x_star, "psi_star": objective(p, x_star),
           "full_res": trace.summary["final_full_res"], "cached": False}
    np.savez(cache, x_star=x_star, psi_star=out["psi_star"],
             full_res=out["full_res"])
    return out


def metric_series(trace: Trace, psi_star, loss_kind: str):
    """Per-row (k, metric, epochs, wall_ms) tuples for comparison plots.

    Logistic runs are measured by relative objective error against the
    reference; the nonconvex loss is measured by the exact residual norm at
    the rows where it was evaluated.
    """
    rows = []
    for r in trace.records:
        if loss_kind == LOGISTIC:
            metric = (r.psi - psi_star) / max(1.0, abs(psi_star))
        else:
            if r.full_res is None:
                continue
            metric = r.full_res
        rows.append((r.k, metric, r.epochs, r.wall_ms))
    return rows


def epochs_to_tolerance(rows, tol: float):
    """(epochs, wall_ms) at the first row whose metric is <= tol, else None."""
    for _k, metric, epochs, wall in rows:
        if metric <= tol:
            return epochs, wall
    return None


def compare_summary(per_method_rows: dict, tolerances=SUMMARY_TOLERANCES):
    """Aggregate rows: one entry per (method, tolerance) plus final metrics."""
    table = []
    for method, runs in per_method_rows.items():
        finals = [run[-1][1] for run in runs if run]
        for tol in tolerances:
            hits = [epochs_to_tolerance(run, tol) for run in runs]
            reached = [h for h in hits if h is not None]
            row = {"method": method, "tolerance": tol,
                   "n_runs": len(runs), "n_reached": len(reached)}
            if reached:
                row["median_epochs"] = statistics.median(h[0] for h in reached)
                row["mean_epochs"] = statistics.fmean(h[0] for h in reached)
                walls = [h[1] for h in reached if h[1] is not None]
                row["median_wall_s"] = (statistics.median(walls) / 1e3
                                        if walls else math.inf)
            else:
                row["median_epochs"] = math.inf
                row["mean_epochs"] = math.inf
                row["median_wall_s"] = math.inf
            row["final_metric_median"] = (statistics.median(finals)
                                          if finals else math.inf)
            table.append(row)
    return table


def _csv_cell(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "unreached"
        return repr(v)
    return str(v)


def write_summary_csv(path: str, table) -> None:
    cols = ("method", "tolerance", "n_runs", "n_reached", "median_epochs",
            "mean_epochs", "median_wall_s", "final_metric_median")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in table:
            fh.write(",".join(_csv_cell(row[c]) for c in cols) + "\n")


def mean_curves(runs_rows, x_index: int):
    """Average metric across runs aligned by record position (alive runs only)."""
    if not runs_rows:
        return [], []
    max_len = max(len(r) for r in runs_rows)
    xs, ys = [], []
    for i in range(max_len):
        pts = [r[i] for r in runs_rows if len(r) > i]
        xvals = [pt[x_index] for pt in pts if pt[x_index] is not None]
        if not xvals:
            continue
        xs.append(statistics.fmean(xvals))
        ys.append(statistics.fmean(pt[1] for pt in pts))
    return xs, ys


def run_experiment(cfg: ExperimentConfig) -> dict:
    os.makedirs(cfg.out_dir, exist_ok=True)
    t_load = time.perf_counter()
    ds = load_dataset(cfg.dataset)
    load_s = time.perf_counter() - t_load
    p = CompositeProblem(ds, loss_kind=cfg.loss_kind, reg_weight=cfg.reg_weight)

    psi_star = None
    ref_info = None
    if cfg.loss_kind == LOGISTIC:
        ref_info = reference_solution(p, cfg, cfg.out_dir)
        psi_star = ref_info["psi_star"]

    per_method_rows = {}
    manifest_runs = []
    for method in cfg.methods:
        runs_rows = []
        for seed in cfg.seeds:
            trace = run_single(p, cfg, method, seed)
            name = os.path.join(cfg.out_dir, f"trace_{method}_seed{seed}.csv")
            trace.to_csv(name, with_timing=cfg.with_timing)
            runs_rows.append(metric_series(trace, psi_star, cfg.loss_kind))
            summ = {k: v for k, v in trace.summary.items() if k != "x_final"}
            manifest_runs.append({"method": method, "seed": seed, **summ})
        per_method_rows[method] = runs_rows

    table = compare_summary(per_method_rows)
    write_summary_csv(os.path.join(cfg.out_dir, "summary.csv"), table)

    metric_name = "relative error" if cfg.loss_kind == LOGISTIC else "residual norm"
    stem = "relerr" if cfg.loss_kind == LOGISTIC else "fullres"
    series_epochs, series_wall = [], []
    for method, runs_rows in per_method_rows.items():
        xe, ye = mean_curves(runs_rows, 2)
        if xe:
            series_epochs.append({"label": method, "x": xe, "y": ye})
        xw, yw = mean_curves(runs_rows, 3)
        if xw:
            series_wall.append({"label": method,
                                "x": [v / 1e3 for v in xw], "y": yw})
    figures = []
    if series_epochs:
        fp = os.path.join(cfg.out_dir, f"{stem}_vs_epochs.png")
        save_convergence_plot(fp, series_epochs, "epochs", metric_name)
        figures.append(fp)
    if series_wall:
        fp = os.path.join(cfg.out_dir, f"{stem}_vs_wall.png")
        save_convergence_plot(fp, series_wall, "wall time (s)", metric_name)
        figures.append(fp)

    manifest = {
        "dataset": {"n_points": ds.n_points, "n_features": ds.n_features,
                    "hash": ds.content_hash()[:16], "load_s": load_s},
        "loss": cfg.loss_kind, "reg_weight": cfg.reg_weight,
        "methods": list(cfg.methods), "seeds": list(cfg.seeds),
        "psi_star": psi_star,
        "reference": (None if ref_info is None else
                      {"full_res": ref_info["full_res"],
                       "cached": ref_info["cached"]}),
        "runs": manifest_runs, "figures": figures,
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return manifest


ADAGRAD_GRID = tuple(i * 10.0 ** j for j in range(-2, 2) for i in range(1, 10))


def grid_adagrad(cfg: ExperimentConfig) -> dict:
    """Step-scale sweep for the adaptive baseline; ranks by final metric."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    ds = load_dataset(cfg.dataset)
    p = CompositeProblem(ds, loss_kind=cfg.loss_kind, reg_weight=cfg.reg_weight)
    psi_star = None
    if cfg.loss_kind == LOGISTIC:
        psi_star = reference_solution(p, cfg, cfg.out_dir)["psi_star"]

    results = []
    for step in ADAGRAD_GRID:
        finals = []
        for seed in cfg.grid_seeds:
            acfg = AdagradConfig(step_scale=step, max_iters=cfg.grid_max_iters,
                                 stop_tol=cfg.stop_tol, check_every=cfg.check_every,
                                 **{k: v for k, v in cfg.adagrad_overrides.items()
                                    if k != "step_scale"})
            trace = adagrad_run(p, acfg, seed=seed)
            rows = metric_series(trace, psi_star, cfg.loss_kind)
            finals.append(rows[-1][1] if rows else math.inf)
        results.append({"step_scale": step,
                        "final_metric_median": statistics.median(finals)})
    results.sort(key=lambda r: (math.isnan(r["final_metric_median"]),
                                r["final_metric_median"]))
    path = os.path.join(cfg.out_dir, "grid_adagrad.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step_scale,final_metric_median\n")
        for row in results:
            fh.write(f"{_csv_cell(float(row['step_scale']))},"
                     f"{_csv_cell(row['final_metric_median'])}\n")
    best = results[0]
    out = {"best_step_scale": best["step_scale"],
           "best_final_metric": best["final_metric_median"],
           "grid_size": len(results), "csv": path}
    with open(os.path.join(cfg.out_dir, "grid_adagrad.json"), "w",
              encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, default=float)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stochnewton", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run configured methods on a dataset")
    p_run.add_argument("config")
    p_run.add_argument("--out-dir", default=None)

    p_grid = sub.add_parser("grid-adagrad", help="step-scale grid search")
    p_grid.add_argument("config")
    p_grid.add_argument("--out-dir", default=None)

    p_diag = sub.add_parser("diag", help="randomized analytical checks")
    p_diag.add_argument("check", choices=sorted(CHECKS) + ["all"])
    p_diag.add_argument("--trials", type=int, default=None)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--out", default=None)

    args = parser.parse_args(argv)

    if args.command == "run":
        cfg = parse_config(args.config)
        if args.out_dir:
            cfg.out_dir = args.out_dir
        manifest = run_experiment(cfg)
        print(json.dumps({"out_dir": cfg.out_dir,
                          "runs": len(manifest["runs"]),
                          "figures": manifest["figures"]}, indent=2))
        return 0

    if args.command == "grid-adagrad":
        cfg = parse_config(args.config)
        if args.out_dir:
            cfg.out_dir = args.out_dir
        out = grid_adagrad(cfg)
        print(json.dumps(out, indent=2, default=float))
        return 0

    names = sorted(CHECKS) if args.check == "all" else [args.check]
    reports = []
    for name in names:
        kwargs = {"seed": args.seed}
        if args.trials is not None:
            kwargs["trials"] = args.trials
        reports.append(run_check(name, **kwargs).to_dict())
    payload = reports[0] if len(reports) == 1 else reports
    text = json.dumps(payload, indent=2)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0 if all(r["passed"] for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
