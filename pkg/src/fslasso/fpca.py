"""Functional principal components from basis pre-smoothed curves.

Each subject's raw observations are ridge-regressed onto a pre-smoothing
basis; the coefficient covariance is then eigendecomposed in the L2 metric
of that basis, so the eigenfunctions are orthonormal as functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .basis import BasisSpec, DomainError, GramMatrix, eval_matrix, l2_gram

__all__ = [
    "RankError",
    "FpcaModel",
    "ScoreMatrix",
    "presmooth",
    "fit_fpca",
    "project_scores",
    "reconstruct",
]

MAX_COMPONENTS = 10


class RankError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class FpcaModel:
    mean_coefs: np.ndarray
    eigen_coefs: np.ndarray  # J_s x M_pc, columns are eigenfunctions
    eigenvalues: np.ndarray
    fve: float
    presmooth_spec: Optional[BasisSpec]
    ridge: float
    gram: np.ndarray
    all_eigenvalues: np.ndarray

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    def mean(self, t) -> np.ndarray:
        return reconstruct(self, np.zeros(self.n_components), t)

    def eigenfunctions(self, t) -> np.ndarray:
        """``len(t) x M_pc`` matrix of eigenfunction values."""
        E = eval_matrix(self.presmooth_spec, np.atleast_1d(t)).E
        return E @ self.eigen_coefs


@dataclass(frozen=True)
class ScoreMatrix:
    Y_scores: np.ndarray

    @property
    def shape(self):
        return self.Y_scores.shape


def presmooth(obs, spec: BasisSpec, ridge: float = 1e-3) -> np.ndarray:
    """Per-subject ridge fits ``(E_n^T E_n + ridge I)^{-1} E_n^T Y_n``, stacked in rows."""
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    out = np.empty((obs.N, spec.J))
    eye = np.eye(spec.J)
    for n, (t, y) in enumerate(zip(obs.times, obs.values)):
        if t.size == 0:
            raise ValueError(f"subject {n} has no observations")
        E = eval_matrix(spec, t).E
        M = E.T @ E
        if ridge == 0 and np.linalg.matrix_rank(M) < spec.J:
            raise RankError(f"subject {n}: {t.size} observations cannot determine {spec.J} "
                            "coefficients; use a positive ridge")
        out[n] = np.linalg.solve(M + ridge * eye, E.T @ y)
    return out


def _sym_sqrt(G: np.ndarray):
    w, U = np.linalg.eigh(G)
    if w.min() <= 0:
        raise np.linalg.LinAlgError("basis Gram matrix is not positive definite")
    return (U * np.sqrt(w)) @ U.T, (U / np.sqrt(w)) @ U.T


def fit_fpca(coefs: np.ndarray, gram: GramMatrix | np.ndarray, fve_target: float = 0.99,
             max_components: int = MAX_COMPONENTS, spec: Optional[BasisSpec] = None,
             ridge: float = 0.0) -> FpcaModel:
    """Eigendecompose the sample covariance of basis coefficients.

    Parameters
    ----------
    coefs : (N, J_s) array
        Pre-smoothing coefficients, one subject per row.
    gram : GramMatrix or (J_s, J_s) array
        L2 inner products of the pre-smoothing basis functions.
    fve_target : float
        Keep the fewest components whose eigenvalues explain at least this
        fraction of total variance (at most ``max_components``).
    """
    coefs = np.asarray(coefs, dtype=float)
    G = np.asarray(getattr(gram, "F", gram), dtype=float)
    if coefs.shape[0] < 2:
        raise ValueError("need at least two curves for FPCA")
    if not 0 < fve_target <= 1:
        raise ValueError("fve_target must lie in (0, 1]")
    if G.shape != (coefs.shape[1],) * 2:
        raise ValueError(f"gram shape {G.shape} does not match {coefs.shape[1]} coefficients")
    mean = coefs.mean(axis=0)
    C = coefs - mean
    S = C.T @ C / (coefs.shape[0] - 1)
    G_half, G_ihalf = _sym_sqrt(G)
    w, U = np.linalg.eigh(G_half @ S @ G_half)
    order = np.argsort(-w, kind="stable")
    w = np.maximum(w[order], 0.0)
    U = U[:, order]
    total = w.sum()
    if total <= 0:
        M = 1
        fve = 1.0
    else:
        cum = np.cumsum(w) / total
        M = int(np.searchsorted(cum, fve_target - 1e-12) + 1)
        M = max(1, min(M, max_components, w.size))
        fve = float(cum[M - 1])
    phi = G_ihalf @ U[:, :M]
    for k in range(M):
        col = phi[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            phi[:, k] = -col
    return FpcaModel(mean, phi, w[:M].copy(), fve, spec, ridge, G, w)


def project_scores(model: FpcaModel, coefs: np.ndarray) -> ScoreMatrix:
    """Scores ``<Y_n - mu, phi_k>`` computed in coefficient space."""
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    if coefs.shape[1] != model.mean_coefs.size:
        raise ValueError(f"expected {model.mean_coefs.size} coefficients per curve, got {coefs.shape[1]}")
    return ScoreMatrix((coefs - model.mean_coefs) @ model.gram @ model.eigen_coefs)


def reconstruct(model: FpcaModel, scores, t):
    """``mu(t) + sum_k scores[k] phi_k(t)``; scalar ``t`` gives a float."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    spec = model.presmooth_spec
    a, b = spec.domain
    if np.any(tt < a) or np.any(tt > b):
        raise DomainError(f"t outside [{a}, {b}]")
    E = eval_matrix(spec, tt).E
    val = E @ (model.mean_coefs + model.eigen_coefs @ np.asarray(scores, dtype=float))
    return float(val[0]) if scalar else val


def fit_from_observations(obs, spec: BasisSpec, fve_target: float = 0.99, ridge: float = 1e-3,
                          max_components: int = MAX_COMPONENTS):
    """Pre-smooth, fit FPCA and project the same curves. Returns ``(model, scores)``."""
    coefs = presmooth(obs, spec, ridge)
    model = fit_fpca(coefs, l2_gram(spec), fve_target, max_components, spec, ridge)
    return model, project_scores(model, coefs)
