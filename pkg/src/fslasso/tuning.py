"""Regularization paths, safe group screening and model selection."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .design import DenseDesign, GroupDesign
from .solver import CoefficientMatrix, FitResult, SolverConfig, fit, kkt_residual, lambda_max, objective_value

__all__ = [
    "lambda_max",
    "lambda_grid",
    "ScreeningReport",
    "screen",
    "choose_screening_lambda",
    "PathFit",
    "fit_path",
    "refit_and_sigma2",
    "CriterionKind",
    "Criterion",
    "criterion_score",
    "SelectionReport",
    "select",
    "cv_folds",
]


def lambda_grid(design: GroupDesign, n: int = 100, ratio: float = 0.01) -> np.ndarray:
    """``n`` log-spaced penalties from ``lambda_max`` down to ``ratio * lambda_max``."""
    lmax = lambda_max(design)
    if lmax <= 0:
        raise ValueError("lambda_max is zero: the response is orthogonal to every group")
    if n == 1:
        return np.array([lmax])
    return lmax * np.logspace(0.0, math.log10(ratio), n)


@dataclass(frozen=True)
class ScreeningReport:
    lambda0: float
    kept: tuple
    dropped: tuple
    score: np.ndarray = field(repr=False)  # ||A_i^T y||_2
    fro: np.ndarray = field(repr=False)  # ||A_i||_F


def _screen_parts(design: GroupDesign):
    cache = design.__dict__.get("_screen_parts")
    if cache is None:
        score = np.linalg.norm(design.adjoint(design.y), axis=1)
        cache = (score, design.block_fro_norms, float(np.linalg.norm(design.y)))
        design.__dict__["_screen_parts"] = cache
    return cache


def screen(design: GroupDesign, lam: float) -> ScreeningReport:
    """Safe rule: drop group ``i`` when

    ``||A_i^T y|| / lam0 + (1/lam - 1/lam0) ||A_i||_F ||y|| < 1``

    with ``lam0 = max_i ||A_i^T y||``. Dropped groups are zero in every
    solution at ``lam``.
    """
    if lam <= 0:
        raise ValueError("screening needs a positive lambda")
    score, fro, ynorm = _screen_parts(design)
    lam0 = float(score.max()) if score.size else 0.0
    if lam0 == 0 or lam > lam0:
        return ScreeningReport(lam0, (), tuple(range(design.I)), score, fro)
    lhs = score / lam0 + (1.0 / lam - 1.0 / lam0) * fro * ynorm
    drop = lhs < 1.0
    # the argmax group has lhs >= 1 exactly; guard against rounding
    drop[int(np.argmax(score))] = False
    return ScreeningReport(lam0, tuple(np.flatnonzero(~drop).tolist()), tuple(np.flatnonzero(drop).tolist()),
                           score, fro)


def choose_screening_lambda(design: GroupDesign, s: int, rel_tol: float = 1e-6) -> float:
    """Smallest penalty at which the safe rule keeps at most ``s`` groups (bisection)."""
    if s < 1:
        raise ValueError("s must be at least 1")
    lam0 = screen(design, 1.0).lambda0 if design.I else 0.0
    if lam0 == 0:
        raise ValueError("lambda_max is zero")
    if s >= design.I:
        warnings.warn("s >= I: every group can be kept; returning a tiny lambda", RuntimeWarning)
        return lam0 * 1e-12
    lo, hi = 0.0, lam0  # keep-count(lo) > s >= keep-count(hi)
    tol = rel_tol * lam0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid > 0 and len(screen(design, mid).kept) <= s:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class PathFit:
    """Warm-started fits along a decreasing penalty grid.

    ``entry_order[i]`` is the grid position where group ``i`` first becomes
    active (``inf`` if never); ``entry_lambda[i]`` the matching penalty
    (0 if never).
    """

    lambdas: np.ndarray
    fits: tuple
    entry_order: np.ndarray
    entry_lambda: np.ndarray
    kept_counts: tuple = ()
    truncated: bool = False

    @property
    def all_converged(self) -> bool:
        return all(f.converged for f in self.fits)

    @property
    def active_sets(self) -> list:
        return [f.B.active_set for f in self.fits]

    def ranking(self) -> np.ndarray:
        """Groups ordered by entry (earliest first); never-entered groups last, by index."""
        return np.lexsort((np.arange(self.entry_order.size), self.entry_order))


def fit_path(design: GroupDesign, lambdas: Optional[Sequence[float]] = None,
             config: Optional[SolverConfig] = None, use_screening: bool = True,
             max_active: Optional[int] = None) -> PathFit:
    """Fit every penalty in ``lambdas`` (strictly decreasing), warm-starting each
    fit from the previous solution. Groups dropped by :func:`screen` are
    excluded from the solve at that penalty.

    ``max_active`` stops the path early once more than that many groups are
    active (the remaining penalties are not fitted).
    """
    config = config or SolverConfig()
    lambdas = lambda_grid(design) if lambdas is None else np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0:
        raise ValueError("need a nonempty 1-D penalty grid")
    if np.any(lambdas <= 0) or np.any(np.diff(lambdas) >= 0):
        raise ValueError("penalties must be positive and strictly decreasing")
    lmax = lambda_max(design)
    tol = config.kkt_tol if config.kkt_tol is not None else config.kkt_rel * max(lmax, 1e-300)
    # precompute per-group factorizations once for the whole path
    design.group_eigh
    I, J = design.I, design.J
    B = np.zeros((I, J)) if config.warm_start is None else np.array(config.warm_start.B, dtype=float)
    fits, kept_counts = [], []
    entry = np.full(I, np.inf)
    entry_lam = np.zeros(I)
    truncated = False
    for k, lam in enumerate(lambdas):
        if use_screening:
            kept = np.asarray(screen(design, lam).kept, dtype=int)
        else:
            kept = np.arange(I)
        kept_counts.append(int(kept.size))
        B_full = np.zeros((I, J))
        if kept.size:
            sub = design.restrict(kept) if kept.size < I else design
            warm = CoefficientMatrix(B[kept])
            res = fit(sub, lam, replace(config, kkt_tol=tol, warm_start=warm))
            B_full[kept] = res.B.B
            iters = res.iterations
        else:
            iters = 0
        coef = CoefficientMatrix(B_full)
        kkt = kkt_residual(design, B_full, lam)
        fits.append(FitResult(coef, float(lam), objective_value(design, B_full, lam), kkt, iters, bool(kkt <= tol)))
        if not fits[-1].converged:
            warnings.warn(f"fit at lambda={lam:.4g} did not reach KKT tolerance ({kkt:.3g} > {tol:.3g})",
                          RuntimeWarning)
        newly = np.array(coef.active_set, dtype=int)
        newly = newly[np.isinf(entry[newly])]
        entry[newly] = k
        entry_lam[newly] = lam
        B = B_full
        if max_active is not None and len(coef.active_set) > max_active and k + 1 < lambdas.size:
            truncated = True
            lambdas = lambdas[: k + 1]
            break
    return PathFit(lambdas.copy(), tuple(fits), entry, entry_lam, tuple(kept_counts), truncated)


def refit_and_sigma2(design: GroupDesign, active: Sequence[int], ridge: float = 1e-8):
    """Unpenalized least squares on the active groups and the residual variance.

    ``sigma2 = RSS / n_rows`` where ``n_rows`` is ``sum_n M_n`` (sparse) or
    ``N * M_pc`` (dense). Falls back to a tiny ridge when the active
    columns outnumber the rows.
    """
    active = np.asarray(sorted(set(int(i) for i in active)), dtype=int)
    B = np.zeros((design.I, design.J))
    if active.size == 0:
        return CoefficientMatrix(B), float(np.mean(design.y ** 2))
    if isinstance(design, DenseDesign):
        Xs = design.X[:, active]
        rhs = design.scores
        if active.size > design.N:
            coef = np.linalg.solve(Xs.T @ Xs + ridge * np.eye(active.size), Xs.T @ rhs)
        else:
            coef = np.linalg.lstsq(Xs, rhs, rcond=None)[0]
        B[active] = coef
    else:
        H = design.cross_gram(active)
        rhs = design.restrict(active).adjoint(design.y).ravel()
        if H.shape[0] > design.n_rows:
            H = H + ridge * np.eye(H.shape[0])
        try:
            b = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            b = np.linalg.lstsq(H, rhs, rcond=None)[0]
        B[active] = b.reshape(active.size, design.J)
    r = design.y - design.apply(B)
    return CoefficientMatrix(B), float(r @ r) / design.n_rows


class CriterionKind(str, enum.Enum):
    AIC = "aic"
    BIC = "bic"
    EBIC = "ebic"
    CV = "cv"


@dataclass(frozen=True)
class Criterion:
    kind: CriterionKind = CriterionKind.BIC
    gamma: float = 0.2
    folds: int = 2
    seed: int = 0
    refit_cv: bool = False
    # information criteria skip refits using more than this fraction of the rows
    max_df_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", CriterionKind(self.kind))

    @classmethod
    def parse(cls, name: str, **kw) -> "Criterion":
        return cls(CriterionKind(name.lower()), **kw)


def criterion_score(sigma2: float, n_rows: int, J: int, n_active: int, N: int, I: int,
                    criterion: Criterion | str = "bic") -> float:
    """Information criterion ``log(sigma2) * n_rows + J * n_active * c``.

    ``c = log N`` (BIC, EBIC) or ``2`` (AIC); EBIC adds
    ``2 gamma log C(I, n_active)``. For the sparse method ``n_rows = sum M_n``
    and ``J`` is the basis size; for the dense method ``n_rows = N M_pc`` and
    ``J = M_pc``. Returns ``-inf`` for an exact fit.
    """
    if isinstance(criterion, str):
        criterion = Criterion.parse(criterion)
    if criterion.kind is CriterionKind.CV:
        raise ValueError("cross-validation is scored by select(), not by a closed form")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if sigma2 == 0:
        return -math.inf
    per_param = 2.0 if criterion.kind is CriterionKind.AIC else math.log(N)
    score = math.log(sigma2) * n_rows + J * n_active * per_param
    if criterion.kind is CriterionKind.EBIC:
        log_binom = math.lgamma(I + 1) - math.lgamma(n_active + 1) - math.lgamma(I - n_active + 1)
        score += 2.0 * criterion.gamma * log_binom
    return score


@dataclass(frozen=True)
class SelectionReport:
    criterion: Criterion
    scores: np.ndarray
    chosen_index: int
    chosen_lambda: float
    refit_B: CoefficientMatrix
    sigma2_hat: float
    exact_fit: bool = False
    penalized_B: Optional[CoefficientMatrix] = None  # path estimate at the chosen penalty

    @property
    def active_set(self) -> tuple:
        return self.refit_B.active_set


def cv_folds(N: int, k: int, seed: int = 0) -> list:
    """Partition subjects ``0..N-1`` into ``k`` folds with a seeded shuffle."""
    if not 2 <= k <= N:
        raise ValueError(f"need 2 <= folds <= N, got {k}")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 7919])).permutation(N)
    return [np.sort(part) for part in np.array_split(perm, k)]


def _cv_scores(design: GroupDesign, path: PathFit, criterion: Criterion, config: SolverConfig) -> np.ndarray:
    folds = cv_folds(design.N, criterion.folds, criterion.seed)
    errs = np.zeros((len(folds), path.lambdas.size))
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(design.N), test)
        tr = design.subset_subjects(train)
        te = design.subset_subjects(test)
        # penalties scale with the amount of data in the loss
        scale = tr.n_rows / design.n_rows
        lams = path.lambdas * scale
        sub_path = fit_path(tr, lams, replace(config, warm_start=None))
        for k, fr in enumerate(sub_path.fits):
            B = fr.B.B
            if criterion.refit_cv:
                B = refit_and_sigma2(tr, fr.B.active_set)[0].B
            r = te.y - te.apply(B)
            errs[f, k] = float(r @ r) / te.n_rows
        errs[f, len(sub_path.fits):] = errs[f, len(sub_path.fits) - 1]
    return errs.mean(axis=0)


def select(path: PathFit, criterion: Criterion | str, design: GroupDesign,
           config: Optional[SolverConfig] = None) -> SelectionReport:
    """Score every path point and pick the minimizer (ties go to the larger penalty).

    Information criteria use the debiased least-squares refit on each active
    set; refits with more than ``criterion.max_df_fraction`` of the rows as
    parameters score ``inf``. Cross-validation refits the path on subject folds and scores
    held-out prediction error of the penalized coefficients.
    """
    if isinstance(criterion, str):
        criterion = Criterion.parse(criterion)
    if len(path.fits) == 0:
        raise ValueError("empty path")
    refits = {}

    def refit(active):
        key = tuple(active)
        if key not in refits:
            refits[key] = refit_and_sigma2(design, key)
        return refits[key]

    if criterion.kind is CriterionKind.CV:
        scores = _cv_scores(design, path, criterion, config or SolverConfig())
    else:
        scores = np.empty(len(path.fits))
        for k, fr in enumerate(path.fits):
            df = len(fr.B.active_set) * design.J
            if df >= design.n_rows or df > criterion.max_df_fraction * design.n_rows:
                # near-saturated refits drive log(sigma2) to -inf and swamp the penalty
                scores[k] = math.inf
                continue
            _, s2 = refit(fr.B.active_set)
            scores[k] = criterion_score(s2, design.n_rows, design.J, len(fr.B.active_set),
                                        design.N, design.I, criterion)
    best = int(np.argmin(scores))  # first minimum = largest penalty
    B_ref, s2 = refit(path.fits[best].B.active_set)
    return SelectionReport(criterion, scores, best, float(path.lambdas[best]), B_ref, s2,
                           exact_fit=bool(s2 == 0.0), penalized_B=path.fits[best].B)
