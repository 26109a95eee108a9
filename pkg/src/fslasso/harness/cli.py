"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..basis import BasisSpec
from ..design import build_sparse_design
from ..basis import eval_matrix
from ..simulate import ConditioningError, DesignKind, SimScenario, gen_subjects, gen_truth, replicate_rng
from ..solver import Algorithm, DivergenceError, SolverConfig, fit
from ..tuning import Criterion, choose_screening_lambda, fit_path, lambda_grid, screen
from . import io
from .diagnostics import re_diagnostic
from .experiment import (EXPERIMENT_METHOD_CONFIG, SENSITIVITY_J, ExperimentConfig, basis_sensitivity,
                         bench_paths, run_experiment)
from .methods import METHODS, MethodConfig, fit_method
from .metrics import roc_from_path

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


# ---------------------------------------------------------------- arguments

def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, help="scenario JSON (overrides the individual flags)")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--I", type=int, default=1000)
    p.add_argument("--I0", type=int, default=10)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--M-obs", type=int, default=10)
    p.add_argument("--design-kind", choices=[k.value for k in DesignKind], default="gaussian_ar")
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--obs", type=Path, required=True, help="long CSV with subject_id,t,y")
    p.add_argument("--design", type=Path, required=True, help="design CSV, N x I with a header row")


def _method_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="sparse")
    p.add_argument("--basis", choices=["bspline", "fourier"], default="bspline")
    p.add_argument("--J", type=int, default=30, help="sparse-method basis size")
    p.add_argument("--presmooth-J", type=int, default=10)
    p.add_argument("--fve", type=float, default=0.99)
    p.add_argument("--lambda-grid", default="100",
                   help="number of log-spaced penalties, or a comma-separated decreasing list")
    p.add_argument("--lambda-ratio", type=float, default=0.01)
    p.add_argument("--max-active", type=int, default=None)
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="bcd")
    p.add_argument("--no-standardize", action="store_true")


def _criterion_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--criterion", choices=["aic", "bic", "ebic", "cv"], default="bic")
    p.add_argument("--ebic-gamma", type=float, default=0.2)
    p.add_argument("--cv-folds", type=int, default=2)


def _out_arg(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--out", type=Path, required=required, help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fslasso", description="Function-on-scalar group LASSO tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one dataset (train and test subjects) from a scenario")
    _scenario_args(p)
    p.add_argument("--replicate", type=int, default=0)
    _out_arg(p, required=True)

    p = sub.add_parser("fit", help="fit the penalty path and select a model (or fit one --lambda)")
    _dataset_args(p)
    _method_args(p)
    _criterion_args(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fit this single penalty")
    p.add_argument("--seed", type=int, default=0)
    _out_arg(p)

    p = sub.add_parser("path", help="fit the penalty path and report entry order")
    _dataset_args(p)
    _method_args(p)
    _out_arg(p)

    p = sub.add_parser("screen", help="apply the safe screening rule")
    _dataset_args(p)
    _method_args(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--keep", type=int, help="smallest penalty keeping at most this many groups")
    _out_arg(p)

    p = sub.add_parser("select", help="score a path under a criterion")
    _dataset_args(p)
    _method_args(p)
    _criterion_args(p)
    p.add_argument("--seed", type=int, default=0)
    _out_arg(p)

    p = sub.add_parser("roc", help="ROC curve of the path against a known truth")
    _dataset_args(p)
    _method_args(p)
    p.add_argument("--truth", type=Path, required=True)
    _out_arg(p)

    p = sub.add_parser("re-check", help="Monte-Carlo restricted-eigenvalue estimate")
    _dataset_args(p)
    p.add_argument("--J", type=int, default=5)
    p.add_argument("--basis", choices=["bspline", "fourier"], default="fourier")
    p.add_argument("--I0", type=int, required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _out_arg(p)

    p = sub.add_parser("bench", help="wall time of the full path for each method on one replicate")
    _scenario_args(p)
    p.add_argument("--methods", default="dense,sparse")
    _out_arg(p)

    p = sub.add_parser("experiment", help="Monte-Carlo comparison of methods")
    _scenario_args(p)
    p.add_argument("--methods", default="sparse,dense")
    p.add_argument("--criterion", action="append", choices=["aic", "bic", "ebic", "cv"],
                   help="repeatable; default bic")
    p.add_argument("--ebic-gamma", type=float, default=0.2)
    p.add_argument("--cv-folds", type=int, default=2)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--max-active", type=int, default=100)
    p.add_argument("--preset", choices=["basis-sensitivity"], default=None,
                   help=f"basis-sensitivity: sparse method with J in {SENSITIVITY_J}")
    _out_arg(p, required=True)
    return parser


# ---------------------------------------------------------------- helpers

def _scenario(args) -> SimScenario:
    if args.scenario is not None:
        try:
            return SimScenario.from_json(args.scenario)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise io.InputError(f"cannot load scenario {args.scenario}: {exc}") from exc
    return SimScenario(N=args.N, I=args.I, I0=args.I0, rho=args.rho, M_obs=args.M_obs,
                       design_kind=args.design_kind, seed=args.seed, n_test=args.n_test)


def _method_config(args) -> MethodConfig:
    grid = args.lambda_grid
    n = int(grid) if grid.strip().isdigit() else 100
    return MethodConfig(
        sparse_basis=BasisSpec(args.basis, args.J),
        presmooth_basis=BasisSpec("bspline", args.presmooth_J),
        fve_target=args.fve,
        n_lambdas=n,
        lambda_ratio=args.lambda_ratio,
        max_active=args.max_active,
        standardize=not args.no_standardize,
        solver=SolverConfig(algorithm=Algorithm(args.algorithm)),
    )


def _explicit_grid(args) -> Optional[np.ndarray]:
    grid = args.lambda_grid.strip()
    if grid.isdigit():
        return None
    try:
        vals = np.array([float(v) for v in grid.split(",") if v.strip()])
    except ValueError as exc:
        raise io.InputError(f"bad --lambda-grid {grid!r}") from exc
    if vals.size == 0 or np.any(vals <= 0) or np.any(np.diff(vals) >= 0):
        raise io.InputError("--lambda-grid values must be positive and strictly decreasing")
    return vals


def _load(args):
    obs, ids = io.read_long_csv(args.obs)
    X = io.read_design_csv(args.design)
    if X.N != obs.N:
        raise io.InputError(f"design has {X.N} rows but observations list {obs.N} subjects")
    return obs, X


def _fit_method(args, obs, X):
    cfg = _method_config(args)
    grid = _explicit_grid(args)
    if grid is None:
        return fit_method(args.method, obs, X, cfg)
    # fit with a user grid: build the design once, then refit the path on that grid
    mf = fit_method(args.method, obs, X, replace(cfg, n_lambdas=1))
    mf.path = fit_path(mf.design, grid, cfg.solver, max_active=cfg.max_active)
    return mf


def _criterion(args) -> Criterion:
    return Criterion.parse(args.criterion, gamma=args.ebic_gamma, folds=args.cv_folds, seed=args.seed)


def _emit(args, payload: dict) -> None:
    payload = {"format_version": io.FORMAT_VERSION, **payload}
    if args.out is None:
        print(json.dumps(io.to_jsonable(payload), sort_keys=True, indent=2))
    else:
        io.write_json(args.out, payload)


def _rows(B, names) -> dict:
    B = getattr(B, "B", B)
    active = np.flatnonzero(np.linalg.norm(B, axis=1) > 0)
    return {str(names[i]) if names else str(i): B[i].tolist() for i in active}


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    sc = _scenario(args)
    rng = replicate_rng(sc.seed, args.replicate, 0)
    truth = gen_truth(sc, rng)
    obs, X = gen_subjects(sc, truth, rng)
    test_obs, test_X = gen_subjects(sc, truth, replicate_rng(sc.seed, args.replicate, 1), N=sc.n_test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"x{i}" for i in range(sc.I)]
    io.write_long_csv(out / "obs.csv", obs)
    io.write_design_csv(out / "design.csv", X, names)
    io.write_long_csv(out / "test_obs.csv", test_obs)
    io.write_design_csv(out / "test_design.csv", test_X, names)
    io.write_truth_json(out / "truth.json", truth)
    io.write_json(out / "scenario.json", {"format_version": io.FORMAT_VERSION, **sc.to_dict()})
    print(f"wrote dataset for N={sc.N}, I={sc.I} to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    obs, X = _load(args)
    cfg = _method_config(args)
    if args.lam is not None:
        mf = fit_method(args.method, obs, X, replace(cfg, n_lambdas=1))
        res = fit(mf.design, args.lam, cfg.solver)
        _emit(args, {
            "method": args.method, "lambda": args.lam, "objective": res.objective,
            "kkt_residual": res.kkt_residual, "converged": res.converged, "iterations": res.iterations,
            "active_set": list(res.B.active_set), "coefficients": _rows(res.B, X.names),
        })
        return EXIT_OK if res.converged else EXIT_NUMERIC
    mf = _fit_method(args, obs, X)
    rep = mf.select(_criterion(args))
    payload = {
        "method": args.method,
        "config": cfg.to_dict(),
        "criterion": args.criterion,
        "lambdas": mf.path.lambdas[: len(mf.path.fits)],
        "scores": rep.scores,
        "chosen_index": rep.chosen_index,
        "chosen_lambda": rep.chosen_lambda,
        "active_set": list(rep.active_set),
        "active_names": [X.names[i] for i in rep.active_set] if X.names else None,
        "sigma2_hat": rep.sigma2_hat,
        "coefficients": _rows(rep.penalized_B, X.names),
        "refit_coefficients": _rows(rep.refit_B, X.names),
        "all_converged": mf.path.all_converged,
    }
    if mf.fpca is not None:
        payload["fpca"] = {"M_pc": mf.fpca.n_components, "fve": mf.fpca.fve,
                           "eigenvalues": mf.fpca.eigenvalues}
    _emit(args, payload)
    return EXIT_OK


def cmd_path(args) -> int:
    obs, X = _load(args)
    mf = _fit_method(args, obs, X)
    p = mf.path
    order = p.ranking()
    entered = [int(i) for i in order if np.isfinite(p.entry_order[i])]
    _emit(args, {
        "method": args.method,
        "lambdas": p.lambdas[: len(p.fits)],
        "n_active": [len(a) for a in p.active_sets],
        "objectives": [f.objective for f in p.fits],
        "converged": [f.converged for f in p.fits],
        "entry_order": entered,
        "entry_lambda": [float(p.entry_lambda[i]) for i in entered],
        "truncated": p.truncated,
    })
    return EXIT_OK


def cmd_screen(args) -> int:
    obs, X = _load(args)
    mf = fit_method(args.method, obs, X, replace(_method_config(args), n_lambdas=1))
    lam = args.lam if args.lam is not None else choose_screening_lambda(mf.design, args.keep)
    rep = screen(mf.design, lam)
    _emit(args, {"method": args.method, "lambda": lam, "lambda0": rep.lambda0,
                 "kept": list(rep.kept), "n_dropped": len(rep.dropped)})
    return EXIT_OK


def cmd_select(args) -> int:
    obs, X = _load(args)
    mf = _fit_method(args, obs, X)
    rep = mf.select(_criterion(args))
    _emit(args, {"method": args.method, "criterion": args.criterion,
                 "lambdas": mf.path.lambdas[: len(mf.path.fits)], "scores": rep.scores,
                 "chosen_index": rep.chosen_index, "chosen_lambda": rep.chosen_lambda,
                 "active_set": list(rep.active_set), "sigma2_hat": rep.sigma2_hat})
    return EXIT_OK


def cmd_roc(args) -> int:
    obs, X = _load(args)
    truth = io.read_truth_json(args.truth)
    if truth.I != X.I:
        raise io.InputError(f"truth has I={truth.I} but design has {X.I} predictors")
    mf = _fit_method(args, obs, X)
    roc = roc_from_path(mf.path, truth.support)
    _emit(args, {"method": args.method, "auc": roc.auc, "fpr": roc.fpr, "tpr": roc.tpr})
    return EXIT_OK


def cmd_re_check(args) -> int:
    obs, X = _load(args)
    spec = BasisSpec(args.basis, args.J)
    design = build_sparse_design(X.standardize(), [eval_matrix(spec, t) for t in obs.times], obs.values)
    rep = re_diagnostic(design, args.I0, args.samples, np.random.default_rng(args.seed))
    _emit(args, {"alpha_hat": rep.alpha_hat, "samples": rep.samples, "I0": rep.I0,
                 "cone_factor": rep.cone_factor,
                 "note": "minimum over sampled cone directions: an upper estimate of the true constant"})
    return EXIT_OK


def cmd_bench(args) -> int:
    sc = _scenario(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise io.InputError(f"unknown methods {bad}")
    _emit(args, {"scenario": sc.to_dict(), "timings": bench_paths(sc, methods)})
    return EXIT_OK


def cmd_experiment(args) -> int:
    sc = _scenario(args)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    mc = replace(EXPERIMENT_METHOD_CONFIG, max_active=args.max_active)
    cfg = ExperimentConfig(sc, methods, args.replicates, tuple(args.criterion or ["bic"]), mc,
                           args.cv_folds, args.ebic_gamma)
    if args.preset == "basis-sensitivity":
        out = basis_sensitivity(cfg, SENSITIVITY_J, args.out, args.threads)
        for J, sel in out["results"].items():
            print(f"J={J}: " + ", ".join(f"{c} mse {v['mse']['mean']:.4f}" for c, v in sel.items()))
        return EXIT_OK
    res = run_experiment(cfg, args.out, args.threads)
    for m in methods:
        e = res.report["methods"][m]
        line = f"{m}: mean AUC {e['auc']['mean']:.4f}"
        for c in cfg.criteria:
            line += f", {c} MSE {e['selection'][c]['mse']['mean']:.4f}"
        if e["failures"]:
            line += f", {len(e['failures'])} failed replicates"
        print(line)
    print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "path": cmd_path,
    "screen": cmd_screen,
    "select": cmd_select,
    "roc": cmd_roc,
    "re-check": cmd_re_check,
    "bench": cmd_bench,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (np.linalg.LinAlgError, DivergenceError, ConditioningError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.InputError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
