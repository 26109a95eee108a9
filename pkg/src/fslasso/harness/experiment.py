"""Monte-Carlo experiment driver.

Each replicate draws a truth, training subjects and fresh test subjects,
fits every requested method, and records ROC, prediction error under each
selection criterion, and wall times. Replicates run in a process pool;
aggregation is done afterwards in replicate order, so the report does not
depend on the worker count. Wall times go to a separate file because they
are never reproducible.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..basis import BasisSpec
from ..solver import SolverConfig
from ..simulate import SimScenario, gen_subjects, gen_truth, replicate_rng
from ..tuning import Criterion
from .io import FORMAT_VERSION, write_json
from .methods import METHODS, MethodConfig, fit_method, predict
from .metrics import RocCurve, mean_roc, prediction_mse, roc_from_path

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "run_replicate",
    "run_experiment",
    "basis_sensitivity",
    "bench_paths",
    "SENSITIVITY_J",
    "EXPERIMENT_METHOD_CONFIG",
]

SENSITIVITY_J = (27, 30, 33)
# path capped at 100 active groups; KKT tolerance loosened for Monte-Carlo throughput
EXPERIMENT_METHOD_CONFIG = MethodConfig(max_active=100, solver=SolverConfig(kkt_rel=1e-4))
ROC_GRID = np.linspace(0.0, 1.0, 201)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: SimScenario = field(default_factory=SimScenario)
    methods: tuple = ("sparse", "dense")
    replicates: int = 100
    criteria: tuple = ("bic",)
    method_config: MethodConfig = field(default_factory=lambda: EXPERIMENT_METHOD_CONFIG)
    cv_folds: int = 2
    ebic_gamma: float = 0.2

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        for c in self.criteria:
            Criterion.parse(c)

    def criterion(self, name: str) -> Criterion:
        return Criterion.parse(name, gamma=self.ebic_gamma, folds=self.cv_folds, seed=self.scenario.seed)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "methods": list(self.methods),
            "replicates": self.replicates,
            "criteria": list(self.criteria),
            "method_config": self.method_config.to_dict(),
            "cv_folds": self.cv_folds,
            "ebic_gamma": self.ebic_gamma,
        }


@dataclass
class ExperimentResult:
    report: dict
    timings: dict
    replicates: list


def run_replicate(cfg: ExperimentConfig, r: int) -> dict:
    """Fit every method on replicate ``r``; failures are recorded, not raised."""
    sc = cfg.scenario
    rng = replicate_rng(sc.seed, r, 0)
    truth = gen_truth(sc, rng)
    obs, X = gen_subjects(sc, truth, rng)
    test_obs, test_X = gen_subjects(sc, truth, replicate_rng(sc.seed, r, 1), N=sc.n_test)
    out = {"replicate": r, "support": truth.support.tolist(), "methods": {}}
    for m in cfg.methods:
        rec: dict = {}
        try:
            mf = fit_method(m, obs, X, cfg.method_config)
            roc = roc_from_path(mf.path, truth.support)
            rec.update(auc=roc.auc, fpr=roc.fpr.tolist(), tpr=roc.tpr.tolist(),
                       path_length=len(mf.path.fits), converged=mf.path.all_converged,
                       truncated=mf.path.truncated, path_seconds=mf.seconds)
            if "M_pc" in mf.extras:
                rec["M_pc"] = mf.extras["M_pc"]
            sel = {}
            for c in cfg.criteria:
                t0 = time.perf_counter()
                rep = mf.select(cfg.criterion(c))
                secs = time.perf_counter() - t0
                # debiased refit on the selected set, as for the criterion itself
                pred = predict(mf, rep.refit_B, test_obs, test_X.X)
                active = rep.active_set
                sel[c] = {
                    "mse": prediction_mse(test_obs.values, pred),
                    "chosen_index": rep.chosen_index,
                    "n_selected": len(active),
                    "true_positives": len(set(active) & set(truth.support.tolist())),
                    "seconds": secs,
                }
            rec["selection"] = sel
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            rec = {"error": f"{type(exc).__name__}: {exc}"}
        out["methods"][m] = rec
    return out


def _mean_se(xs) -> dict:
    a = np.asarray([x for x in xs if x is not None and not math.isnan(x)], dtype=float)
    if a.size == 0:
        return {"mean": math.nan, "se": math.nan, "n": 0}
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else math.nan
    return {"mean": float(a.mean()), "se": se, "n": int(a.size)}


def _aggregate(cfg: ExperimentConfig, reps: list) -> tuple[dict, dict, dict, dict]:
    methods, timings, curves = {}, {}, {}
    for m in cfg.methods:
        ok = [r["methods"][m] for r in reps if "error" not in r["methods"][m]]
        failures = [{"replicate": r["replicate"], "error": r["methods"][m]["error"]}
                    for r in reps if "error" in r["methods"][m]]
        rocs = [RocCurve(np.array(o["fpr"]), np.array(o["tpr"]), o["auc"]) for o in ok]
        mc = mean_roc(rocs, ROC_GRID) if rocs else None
        entry = {
            "auc": _mean_se([o["auc"] for o in ok]),
            "mean_curve_auc": mc.auc if mc else math.nan,
            "failures": failures,
            "non_converged_paths": int(sum(not o["converged"] for o in ok)),
            "selection": {},
        }
        if any("M_pc" in o for o in ok):
            entry["M_pc"] = _mean_se([o.get("M_pc") for o in ok])
        for c in cfg.criteria:
            entry["selection"][c] = {
                k: _mean_se([o["selection"][c][k] for o in ok])
                for k in ("mse", "n_selected", "true_positives")
            }
        methods[m] = entry
        if mc is not None:
            curves[m] = mc
        timings[m] = {
            "path_seconds": _mean_se([o["path_seconds"] for o in ok]),
            "selection_seconds": {c: _mean_se([o["selection"][c]["seconds"] for o in ok]) for c in cfg.criteria},
        }
    comparisons = {}
    if "sparse" in cfg.methods and "dense" in cfg.methods:
        for c in cfg.criteria:
            pairs = [(r["methods"]["sparse"], r["methods"]["dense"]) for r in reps
                     if "error" not in r["methods"]["sparse"] and "error" not in r["methods"]["dense"]]
            wins = [s["selection"][c]["mse"] <= d["selection"][c]["mse"] for s, d in pairs]
            comparisons[f"sparse_mse_win_rate_{c}"] = float(np.mean(wins)) if wins else math.nan
        comparisons["auc_gap_mean_curves"] = abs(methods["sparse"]["mean_curve_auc"] - methods["dense"]["mean_curve_auc"])
    return methods, comparisons, timings, curves


def _write_outputs(out_dir: Path, report: dict, timings: dict, curves: dict, reps: list, cfg) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", report)
    write_json(out_dir / "timings.json", timings)
    for m, c in curves.items():
        with open(out_dir / f"roc_{m}.csv", "w") as fh:
            fh.write("fpr,tpr\n")
            for x, y in zip(c.fpr, c.tpr):
                fh.write(f"{x!r},{float(y)!r}\n")
    with open(out_dir / "replicates.csv", "w") as fh:
        cols = ["replicate", "method", "auc"] + [f"mse_{c}" for c in cfg.criteria] + \
               [f"n_selected_{c}" for c in cfg.criteria] + ["error"]
        fh.write(",".join(cols) + "\n")
        for r in reps:
            for m in cfg.methods:
                o = r["methods"][m]
                if "error" in o:
                    vals = [r["replicate"], m, ""] + [""] * (2 * len(cfg.criteria)) + [o["error"].replace(",", ";")]
                else:
                    vals = [r["replicate"], m, repr(float(o["auc"]))] + \
                           [repr(float(o["selection"][c]["mse"])) for c in cfg.criteria] + \
                           [o["selection"][c]["n_selected"] for c in cfg.criteria] + [""]
                fh.write(",".join(str(v) for v in vals) + "\n")


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> ExperimentResult:
    """Run all replicates and optionally write ``report.json``, ``timings.json``,
    ``roc_<method>.csv`` and ``replicates.csv`` to ``out_dir``.
    """
    t0 = time.perf_counter()
    idx = list(range(cfg.replicates))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(run_replicate, [cfg] * len(idx), idx))
    else:
        reps = [run_replicate(cfg, r) for r in idx]
    methods, comparisons, timings, curves = _aggregate(cfg, reps)
    report = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "methods": methods,
        "comparisons": comparisons,
        "per_replicate": [
            {"replicate": r["replicate"], **{m: ({"error": o["error"]} if "error" in o else
                                                 {"auc": o["auc"], **{c: o["selection"][c]["mse"] for c in cfg.criteria}})
                                              for m, o in r["methods"].items()}}
            for r in reps
        ],
    }
    timings = {"format_version": FORMAT_VERSION, "methods": timings, "threads": threads,
               "total_seconds": time.perf_counter() - t0}
    if out_dir is not None:
        _write_outputs(Path(out_dir), report, timings, curves, reps, cfg)
    return ExperimentResult(report, timings, reps)


def basis_sensitivity(cfg: ExperimentConfig, Js: Sequence[int] = SENSITIVITY_J, out_dir=None,
                      threads: int = 1) -> dict:
    """Sparse-method prediction error for each B-spline basis size in ``Js``."""
    out = {"format_version": FORMAT_VERSION, "J": list(Js), "results": {}}
    for J in Js:
        mc = replace(cfg.method_config, sparse_basis=BasisSpec("bspline", int(J)))
        sub = replace(cfg, methods=("sparse",), method_config=mc)
        res = run_experiment(sub, None if out_dir is None else Path(out_dir) / f"J{J}", threads)
        out["results"][str(J)] = res.report["methods"]["sparse"]["selection"]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "basis_sensitivity.json", out)
    return out


def bench_paths(scenario: SimScenario, methods: Sequence[str] = ("dense", "sparse"),
                cfg: Optional[MethodConfig] = None, replicate: int = 0) -> dict:
    """Wall time of preprocessing plus the full penalty path for each method on one replicate."""
    cfg = cfg or EXPERIMENT_METHOD_CONFIG
    rng = replicate_rng(scenario.seed, replicate, 0)
    truth = gen_truth(scenario, rng)
    obs, X = gen_subjects(scenario, truth, rng)
    out = {}
    for m in methods:
        mf = fit_method(m, obs, X, cfg)
        out[m] = {"seconds": mf.seconds, "path_length": len(mf.path.fits)}
    if "dense" in out and "sparse" in out:
        out["sparse_over_dense"] = out["sparse"]["seconds"] / out["dense"]["seconds"]
    return out
