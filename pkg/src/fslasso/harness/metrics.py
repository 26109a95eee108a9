"""Selection and prediction metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["RocCurve", "roc_from_active_sets", "roc_from_path", "prediction_mse", "mean_roc"]


@dataclass(frozen=True)
class RocCurve:
    """Stepwise ROC upper envelope; ``auc`` is NaN when the truth is empty."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_from_active_sets(active_sets: Sequence[Sequence[int]], truth_support, I: int) -> RocCurve:
    """ROC from a sequence of selected sets (largest penalty first).

    The curve starts at (0, 0), takes the running-maximum envelope of the
    (FPR, TPR) points and ends at (1, 1); groups never selected are thereby
    treated as tied at the end of the ranking.
    """
    truth = set(int(i) for i in truth_support)
    n_pos, n_neg = len(truth), I - len(truth)
    pts = [(0.0, 0.0)]
    for act in active_sets:
        act = set(int(i) for i in act)
        tp = len(act & truth)
        fp = len(act) - tp
        pts.append((fp / n_neg if n_neg else 0.0, tp / n_pos if n_pos else 0.0))
    pts.append((1.0, 1.0))
    pts.sort()
    fpr = np.array([p[0] for p in pts])
    tpr = np.maximum.accumulate(np.array([p[1] for p in pts]))
    if n_pos == 0 or n_neg == 0:
        return RocCurve(fpr, tpr, math.nan)
    auc = float(np.sum(np.diff(fpr) * 0.5 * (tpr[1:] + tpr[:-1])))
    return RocCurve(fpr, tpr, auc)


def roc_from_path(path, truth_support) -> RocCurve:
    I = path.entry_order.size
    return roc_from_active_sets(path.active_sets, truth_support, I)


def mean_roc(curves: Sequence[RocCurve], grid: np.ndarray | None = None) -> RocCurve:
    """Pointwise mean TPR on a common FPR grid (linear interpolation of each envelope)."""
    grid = np.linspace(0.0, 1.0, 1001) if grid is None else grid
    tprs = [_interp_envelope(c, grid) for c in curves]
    tpr = np.mean(tprs, axis=0)
    auc = float(np.sum(np.diff(grid) * 0.5 * (tpr[1:] + tpr[:-1])))
    return RocCurve(grid, tpr, auc)


def _interp_envelope(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    # vertical jumps share an FPR value: between distinct FPRs interpolate from
    # the top of the previous jump to the bottom of the next one
    xs, first = np.unique(curve.fpr, return_index=True)
    last = np.r_[first[1:] - 1, curve.fpr.size - 1]
    lo, hi = curve.tpr[first], curve.tpr[last]
    k = np.clip(np.searchsorted(xs, grid, side="right") - 1, 0, xs.size - 1)
    out = hi[k].copy()
    inner = (grid > xs[k]) & (k + 1 < xs.size)
    kk = k[inner]
    frac = (grid[inner] - xs[kk]) / (xs[kk + 1] - xs[kk])
    out[inner] = hi[kk] + frac * (lo[kk + 1] - hi[kk])
    return out


def prediction_mse(observed: Sequence[np.ndarray], predicted: Sequence[np.ndarray]) -> float:
    """Mean over all test observations of ``(Y_nm - Yhat_n(t_nm))^2``."""
    if len(observed) == 0:
        raise ValueError("empty test set")
    y = np.concatenate([np.asarray(o, float).ravel() for o in observed])
    yhat = np.concatenate([np.asarray(p, float).ravel() for p in predicted])
    if y.size == 0:
        raise ValueError("empty test set")
    if y.shape != yhat.shape:
        raise ValueError("observed and predicted values differ in size")
    return float(np.mean((y - yhat) ** 2))
