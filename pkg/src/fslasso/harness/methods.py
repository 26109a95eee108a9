"""End-to-end fitting pipelines for the four compared methods.

``sparse``
    FS-LASSO on raw observations with a cubic B-spline basis.
``dense``
    FS-LASSO on FPC scores of pre-smoothed curves.
``lasso``
    Scalar LASSO on pooled observations (the sparse pipeline with the
    one-function constant basis).
``tclasso``
    Scalar LASSO after subtracting a local-linear estimate of the pooled
    time-mean from every observation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..basis import BasisSpec, eval_matrix
from ..design import DesignMatrix, build_dense_design, build_sparse_design, fit_pooled_mean
from ..fpca import FpcaModel, fit_from_observations, presmooth, project_scores
from ..simulate import ObservationSet, local_linear_smooth, rule_of_thumb_bandwidth
from ..solver import SolverConfig
from ..tuning import Criterion, PathFit, SelectionReport, fit_path, lambda_grid, select

__all__ = ["METHODS", "MethodConfig", "MethodFit", "fit_method", "predict"]

METHODS = ("sparse", "dense", "lasso", "tclasso")


@dataclass(frozen=True)
class MethodConfig:
    """Settings shared by every method; fields not used by a method are ignored."""

    sparse_basis: BasisSpec = field(default_factory=lambda: BasisSpec("bspline", 30))
    presmooth_basis: BasisSpec = field(default_factory=lambda: BasisSpec("bspline", 10))
    presmooth_ridge: float = 1e-3
    fve_target: float = 0.99
    max_components: int = 10
    n_lambdas: int = 100
    lambda_ratio: float = 0.01
    max_active: Optional[int] = None
    standardize: bool = True
    bandwidth: Optional[float] = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def to_dict(self) -> dict:
        return {
            "sparse_basis": self.sparse_basis.to_dict(),
            "presmooth_basis": self.presmooth_basis.to_dict(),
            "presmooth_ridge": self.presmooth_ridge,
            "fve_target": self.fve_target,
            "max_components": self.max_components,
            "n_lambdas": self.n_lambdas,
            "lambda_ratio": self.lambda_ratio,
            "max_active": self.max_active,
            "standardize": self.standardize,
            "bandwidth": self.bandwidth,
            "solver": {
                "algorithm": self.solver.algorithm.value,
                "max_iters": self.solver.max_iters,
                "rel_obj_tol": self.solver.rel_obj_tol,
                "kkt_rel": self.solver.kkt_rel,
            },
        }


@dataclass
class MethodFit:
    method: str
    design: object
    path: PathFit
    X: DesignMatrix
    mean_fn: Callable[[np.ndarray], np.ndarray]
    curve_fn: Callable[[np.ndarray], np.ndarray]  # t -> len(t) x J basis/eigenfunction values
    seconds: float
    fpca: Optional[FpcaModel] = None
    extras: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def select(self, criterion: Criterion | str) -> SelectionReport:
        return select(self.path, criterion, self.design, self.solver)


def _standardized(X: DesignMatrix, cfg: MethodConfig) -> DesignMatrix:
    return X.standardize() if cfg.standardize else X


def _run_path(design, cfg: MethodConfig) -> PathFit:
    grid = lambda_grid(design, cfg.n_lambdas, cfg.lambda_ratio)
    return fit_path(design, grid, cfg.solver, max_active=cfg.max_active)


def _fit_basis_method(obs: ObservationSet, X: DesignMatrix, spec: BasisSpec, cfg: MethodConfig,
                      mean_kind: str, method: str) -> MethodFit:
    t0 = time.perf_counter()
    t, y = obs.t_flat, obs.y_flat
    if mean_kind == "local_linear":
        h = cfg.bandwidth or rule_of_thumb_bandwidth(t)

        def mean_fn(tt, _t=t, _y=y, _h=h):
            return local_linear_smooth(_t, _y, _h, tt)
    else:
        mc = fit_pooled_mean(spec, t, y)

        def mean_fn(tt, _mc=mc):
            return eval_matrix(spec, tt).E @ _mc
    bases = [eval_matrix(spec, tn) for tn in obs.times]
    mean_flat = mean_fn(t)
    parts = np.split(y - mean_flat, np.cumsum(obs.counts)[:-1])
    Xs = _standardized(X, cfg)
    design = build_sparse_design(Xs, bases, parts)
    path = _run_path(design, cfg)
    seconds = time.perf_counter() - t0
    return MethodFit(method, design, path, Xs, mean_fn, lambda tt: eval_matrix(spec, tt).E, seconds,
                     solver=cfg.solver)


def _fit_dense(obs: ObservationSet, X: DesignMatrix, cfg: MethodConfig) -> MethodFit:
    t0 = time.perf_counter()
    model, scores = fit_from_observations(obs, cfg.presmooth_basis, cfg.fve_target, cfg.presmooth_ridge,
                                          cfg.max_components)
    Xs = _standardized(X, cfg)
    design = build_dense_design(Xs, scores)
    path = _run_path(design, cfg)
    seconds = time.perf_counter() - t0
    return MethodFit("dense", design, path, Xs, model.mean, model.eigenfunctions, seconds, fpca=model,
                     extras={"M_pc": model.n_components, "fve": model.fve}, solver=cfg.solver)


def fit_method(method: str, obs: ObservationSet, X: DesignMatrix, cfg: Optional[MethodConfig] = None) -> MethodFit:
    """Preprocess, build the design and fit the regularization path for ``method``."""
    cfg = cfg or MethodConfig()
    if method == "sparse":
        return _fit_basis_method(obs, X, cfg.sparse_basis, cfg, "basis", "sparse")
    if method == "dense":
        return _fit_dense(obs, X, cfg)
    if method == "lasso":
        return _fit_basis_method(obs, X, BasisSpec("fourier", 1), cfg, "basis", "lasso")
    if method == "tclasso":
        return _fit_basis_method(obs, X, BasisSpec("fourier", 1), cfg, "local_linear", "tclasso")
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def predict(mf: MethodFit, B: np.ndarray, obs: ObservationSet, X_raw: np.ndarray) -> list:
    """Predicted curves at the test subjects' observation times.

    ``X_raw`` is on the original predictor scale; the training
    standardization is applied here.
    """
    Xt = mf.X.transform(X_raw)
    B = getattr(B, "B", B)
    coef = Xt @ B  # subject-level coefficients on the basis / eigenfunctions
    out = []
    for n, t in enumerate(obs.times):
        out.append(mf.mean_fn(t) + mf.curve_fn(t) @ coef[n])
    return out
