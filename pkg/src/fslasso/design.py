"""Group-structured regression operators.

Two concrete designs share one interface:

* :class:`SparseDesign` -- raw observations. Row ``(n, m)`` of group block
  ``A_i`` is ``X_ni * E_nm``. The blocks are never formed as one dense
  ``(sum M_n) x (I J)`` matrix: products go through the stacked basis matrix
  and the subject index, so memory is ``O(sum M_n * J + N * I)``.
* :class:`DenseDesign` -- FPC scores. ``A_F = X kron I_J`` is applied as
  matrix products with ``X``.

Coefficients are always an ``I x J`` array ``B``; responses and residuals
are flat vectors (stacked ``Y_nm`` or the row-major vec of the score matrix).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .basis import BasisMatrix, BasisSpec, eval_matrix

__all__ = [
    "DesignMatrix",
    "GroupDesign",
    "SparseDesign",
    "DenseDesign",
    "build_sparse_design",
    "build_dense_design",
    "group_gram_diag",
    "fit_pooled_mean",
]


@dataclass(frozen=True)
class DesignMatrix:
    """``N x I`` scalar predictors with the centering/scaling that produced them."""

    X: np.ndarray
    standardized: bool = False
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    names: Optional[tuple] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", X)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def I(self) -> int:
        return self.X.shape[1]

    def standardize(self) -> "DesignMatrix":
        """Columns to mean 0 and (population) variance 1.

        Constant columns are centered only. Standardizing an already
        standardized matrix is a no-op up to rounding.
        """
        mu = self.X.mean(axis=0)
        Xc = self.X - mu
        sd = np.sqrt((Xc ** 2).mean(axis=0))
        sd = np.where(sd > 1e-12, sd, 1.0)
        center = mu if self.center is None else self.center + mu * self.scale
        scale = sd if self.scale is None else self.scale * sd
        return DesignMatrix(Xc / sd, True, center, scale, self.names)

    def transform(self, X_new: np.ndarray) -> np.ndarray:
        """Apply this matrix's centering and scaling to new rows."""
        X_new = np.asarray(X_new, dtype=float)
        if self.center is None:
            return X_new
        return (X_new - self.center) / self.scale


class GroupDesign:
    """Interface shared by the sparse and dense designs."""

    X: np.ndarray
    y: np.ndarray

    @property
    def I(self) -> int:
        return self.X.shape[1]

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def J(self) -> int:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def n_rows(self) -> int:
        return self.y.size

    def apply(self, B: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        """``A vec(B^T)`` as a flat vector."""
        raise NotImplementedError

    def adjoint(self, r: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        """``A^T r`` reshaped to ``I x J`` (row ``i`` is ``A_i^T r``)."""
        raise NotImplementedError

    def block(self, i: int) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def block_apply(self, i: int, b: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def block_adjoint(self, i: int, r: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def restrict(self, groups: Sequence[int]) -> "GroupDesign":  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def group_grams(self) -> np.ndarray:  # pragma: no cover - abstract
        """``A_i^T A_i`` for every group, shape ``I x J x J``."""
        raise NotImplementedError

    @property
    def group_eigh(self) -> tuple:
        d, V = np.linalg.eigh(self.group_grams)
        return np.maximum(d, 0.0), V

    @property
    def block_fro_norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("ijj->i", self.group_grams))

    @property
    def is_orthogonal(self) -> bool:
        """True when every ``A_i^T A_i`` is a multiple of the identity."""
        return False

    def cross_gram(self, groups) -> np.ndarray:
        """``A_S^T A_S`` for the listed groups, ``kJ x kJ`` in row-major group order."""
        A = self.restrict(groups).materialize()
        return A.T @ A

    def materialize(self) -> np.ndarray:
        """Full dense ``A``; for small instances and tests only."""
        return np.hstack([self.block(i) for i in range(self.I)])

    def with_response(self, y: np.ndarray) -> "GroupDesign":  # pragma: no cover - abstract
        raise NotImplementedError

    def subset_subjects(self, idx: Sequence[int]) -> "GroupDesign":  # pragma: no cover - abstract
        """Design built from the listed subjects only (for cross-validation)."""
        raise NotImplementedError

    def rows_of(self, idx: Sequence[int]) -> np.ndarray:  # pragma: no cover - abstract
        """Positions in ``y`` belonging to the listed subjects."""
        raise NotImplementedError


class SparseDesign(GroupDesign):
    """Explicit design for raw sparse observations."""

    def __init__(self, X: np.ndarray, E: np.ndarray, subject: np.ndarray, y: np.ndarray,
                 _grams: Optional[np.ndarray] = None, _eigh: Optional[tuple] = None):
        self.X = np.asarray(X, dtype=float)
        self.E = np.asarray(E, dtype=float)
        self.subject = np.asarray(subject, dtype=int)
        self.y = np.asarray(y, dtype=float).ravel()
        if not (self.E.shape[0] == self.subject.size == self.y.size):
            raise ValueError("basis rows, subject index and response must align")
        self._grams = _grams
        self._eigh = _eigh
        # rows grouped by subject; used to aggregate E_n^T r_n quickly
        self._starts = np.flatnonzero(np.r_[True, np.diff(self.subject) != 0])

    @property
    def J(self) -> int:
        return self.E.shape[1]

    def _row_x(self, i: int) -> np.ndarray:
        return self.X[self.subject, i]

    def apply(self, B):
        P = self.X @ B  # N x J subject-level coefficient curves
        return np.einsum("rj,rj->r", self.E, P[self.subject])

    def _aggregate(self, r: np.ndarray) -> np.ndarray:
        # W[n] = E_n^T r_n
        return np.add.reduceat(self.E * r[:, None], self._starts, axis=0)

    def adjoint(self, r):
        W = self._aggregate(np.asarray(r, dtype=float))
        subj = self.subject[self._starts]
        return self.X[subj].T @ W

    def block(self, i):
        return self._row_x(i)[:, None] * self.E

    def block_apply(self, i, b):
        return self._row_x(i) * (self.E @ b)

    def block_adjoint(self, i, r):
        return self.E.T @ (self._row_x(i) * r)

    @cached_property
    def subject_grams(self) -> np.ndarray:
        """``E_n^T E_n`` per subject with observations, shape ``N' x J x J``."""
        J = self.J
        outer = (self.E[:, :, None] * self.E[:, None, :]).reshape(-1, J * J)
        return np.add.reduceat(outer, self._starts, axis=0).reshape(-1, J, J)

    @property
    def group_grams(self):
        if self._grams is None:
            subj = self.subject[self._starts]
            X2 = self.X[subj] ** 2
            J = self.J
            G = X2.T @ self.subject_grams.reshape(-1, J * J)
            G = G.reshape(self.I, J, J)
            self._grams = 0.5 * (G + G.transpose(0, 2, 1))
        return self._grams

    def cross_gram(self, groups) -> np.ndarray:
        """``A_S^T A_S`` for the listed groups, shape ``(k J) x (k J)``."""
        groups = np.asarray(groups, dtype=int)
        subj = self.subject[self._starts]
        Xs = self.X[subj][:, groups]
        H = np.einsum("na,nb,njk->ajbk", Xs, Xs, self.subject_grams, optimize=True)
        k, J = groups.size, self.J
        return H.reshape(k * J, k * J)

    @property
    def group_eigh(self) -> tuple:
        """Batched eigendecomposition ``(d, V)`` of every ``A_i^T A_i``."""
        if self._eigh is None:
            d, V = np.linalg.eigh(self.group_grams)
            self._eigh = (np.maximum(d, 0.0), V)
        return self._eigh

    def restrict(self, groups):
        groups = np.asarray(groups, dtype=int)
        grams = None if self._grams is None else self._grams[groups]
        eig = None if self._eigh is None else (self._eigh[0][groups], self._eigh[1][groups])
        return SparseDesign(self.X[:, groups], self.E, self.subject, self.y, grams, eig)

    def with_response(self, y):
        return SparseDesign(self.X, self.E, self.subject, y, self._grams, self._eigh)

    def rows_of(self, idx):
        return np.flatnonzero(np.isin(self.subject, np.asarray(idx, dtype=int)))

    def subset_subjects(self, idx):
        idx = np.sort(np.asarray(idx, dtype=int))
        rows = self.rows_of(idx)
        remap = np.full(self.N, -1)
        remap[idx] = np.arange(idx.size)
        return SparseDesign(self.X[idx], self.E[rows], remap[self.subject[rows]], self.y[rows])


class DenseDesign(GroupDesign):
    """Implicit ``X kron I_J`` design on an ``N x J`` score matrix."""

    def __init__(self, X: np.ndarray, scores: np.ndarray):
        self.X = np.asarray(X, dtype=float)
        self.scores = np.asarray(scores, dtype=float)
        if self.scores.ndim != 2 or self.scores.shape[0] != self.X.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but scores have shape {self.scores.shape}")
        self.y = self.scores.ravel()

    @property
    def J(self) -> int:
        return self.scores.shape[1]

    @cached_property
    def col_sq_norms(self) -> np.ndarray:
        return np.einsum("ni,ni->i", self.X, self.X)

    def apply(self, B):
        return (self.X @ B).ravel()

    def adjoint(self, r):
        return self.X.T @ np.asarray(r, dtype=float).reshape(self.N, self.J)

    def block(self, i):
        return np.kron(self.X[:, [i]], np.eye(self.J))

    def block_apply(self, i, b):
        return np.outer(self.X[:, i], b).ravel()

    def block_adjoint(self, i, r):
        return self.X[:, i] @ np.asarray(r).reshape(self.N, self.J)

    @property
    def group_grams(self):
        return self.col_sq_norms[:, None, None] * np.eye(self.J)[None]

    @property
    def block_fro_norms(self):
        return np.sqrt(self.col_sq_norms * self.J)

    @property
    def is_orthogonal(self) -> bool:
        return True

    def cross_gram(self, groups) -> np.ndarray:
        Xs = self.X[:, np.asarray(groups, dtype=int)]
        return np.kron(Xs.T @ Xs, np.eye(self.J))

    def restrict(self, groups):
        return DenseDesign(self.X[:, np.asarray(groups, dtype=int)], self.scores)

    def with_response(self, y):
        return DenseDesign(self.X, np.asarray(y, dtype=float).reshape(self.N, self.J))

    def rows_of(self, idx):
        idx = np.sort(np.asarray(idx, dtype=int))
        return (idx[:, None] * self.J + np.arange(self.J)[None, :]).ravel()

    def subset_subjects(self, idx):
        idx = np.sort(np.asarray(idx, dtype=int))
        return DenseDesign(self.X[idx], self.scores[idx])


def build_sparse_design(X: DesignMatrix, bases: Sequence[BasisMatrix], y) -> SparseDesign:
    """Stack ``X_n^T kron E_nm^T`` rows over subjects.

    ``y`` is an :class:`~fslasso.simulate.ObservationSet` or a sequence of
    per-subject response vectors aligned with ``bases``.
    """
    values = getattr(y, "values", y)
    if len(bases) != X.N or len(values) != X.N:
        raise ValueError(f"need one basis matrix and one response per subject ({X.N}), "
                         f"got {len(bases)} and {len(values)}")
    for n, (bm, v) in enumerate(zip(bases, values)):
        if bm.E.shape[0] != np.asarray(v).size:
            raise ValueError(f"subject {n}: {bm.E.shape[0]} basis rows but {np.asarray(v).size} responses")
    E = np.vstack([bm.E for bm in bases])
    subject = np.repeat(np.arange(X.N), [bm.E.shape[0] for bm in bases])
    return SparseDesign(X.X, E, subject, np.concatenate([np.asarray(v, float).ravel() for v in values]))


def build_dense_design(X: DesignMatrix, scores) -> DenseDesign:
    S = getattr(scores, "Y_scores", scores)
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != X.N:
        raise ValueError(f"design has {X.N} rows but scores have shape {S.shape}")
    return DenseDesign(X.X, S)


def _power_sv(A: np.ndarray, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    if not A.any():
        return 0.0
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - sigma) <= tol * new:
            return float(new)
        sigma = new
    return float(sigma)


def group_gram_diag(design: GroupDesign) -> np.ndarray:
    """Operator norm ``||A_i||_op`` of every group block."""
    if isinstance(design, DenseDesign):
        return np.sqrt(design.col_sq_norms)
    return np.array([_power_sv(design.block(i)) for i in range(design.I)])


def fit_pooled_mean(spec: BasisSpec, t: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Basis coefficients of the pooled mean curve by (lightly ridged) least squares."""
    E = eval_matrix(spec, t).E
    return np.linalg.solve(E.T @ E + ridge * np.eye(spec.J), E.T @ y)
