"""Fourier and clamped cubic B-spline bases on a closed interval.

The bases produce the per-subject evaluation matrices ``E_n`` (rows are the
basis vector at each observation time) and the pooled Gram matrix
``F = (1/N) sum_n E_n^T E_n``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "BasisFamily",
    "BasisSpec",
    "BasisMatrix",
    "GramMatrix",
    "DomainError",
    "eval_basis",
    "eval_matrix",
    "gram",
    "l2_gram",
]


class DomainError(ValueError):
    """Raised when an evaluation point falls outside the basis domain."""


class BasisFamily(str, enum.Enum):
    FOURIER = "fourier"
    BSPLINE = "bspline"


@dataclass(frozen=True)
class BasisSpec:
    """Basis family, number of functions and domain.

    Parameters
    ----------
    family : BasisFamily or str
        ``"fourier"`` or ``"bspline"`` (clamped cubic, uniform interior knots).
    J : int
        Number of basis functions. Cubic B-splines need ``J >= 4``.
    domain : (float, float)
        Closed interval ``[a, b]`` with ``b > a``.
    """

    family: BasisFamily
    J: int
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "family", BasisFamily(self.family))
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"J must be a positive integer, got {self.J}")
        object.__setattr__(self, "J", int(self.J))
        if self.family is BasisFamily.BSPLINE and self.J < 4:
            raise ValueError(f"cubic B-splines need J >= 4, got {self.J}")
        a, b = self.domain
        if not b > a:
            raise ValueError(f"empty domain {self.domain}")

    @property
    def knots(self) -> np.ndarray:
        """Full clamped knot vector (length ``J + 4``); B-splines only."""
        if self.family is not BasisFamily.BSPLINE:
            raise AttributeError("knots are defined for B-spline bases only")
        a, b = self.domain
        interior = np.linspace(a, b, self.J - 2)[1:-1]
        return np.concatenate([[a] * 4, interior, [b] * 4])

    def to_dict(self) -> dict:
        return {"family": self.family.value, "J": self.J, "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(d["family"], d["J"], tuple(d.get("domain", (0.0, 1.0))))


@dataclass(frozen=True)
class BasisMatrix:
    """Evaluated basis: ``E[m, j] = e_j(times[m])``."""

    E: np.ndarray
    times: np.ndarray

    @property
    def J(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True)
class GramMatrix:
    F: np.ndarray
    N: int
    op_norm: float = field(init=False)

    def __post_init__(self):
        # symmetric eigensolve; F is PSD so the top eigenvalue is the operator norm
        w = np.linalg.eigvalsh(self.F) if self.F.size else np.zeros(1)
        object.__setattr__(self, "op_norm", float(max(w.max(), 0.0)))


def _check_domain(spec: BasisSpec, t: np.ndarray) -> None:
    a, b = spec.domain
    if not np.all(np.isfinite(t)) or np.any(t < a) or np.any(t > b):
        bad = t[~((t >= a) & (t <= b))]
        raise DomainError(f"evaluation points {bad[:5]} outside domain [{a}, {b}]")


def _fourier(spec: BasisSpec, t: np.ndarray) -> np.ndarray:
    a, b = spec.domain
    u = (t - a) / (b - a)
    scale = 1.0 / np.sqrt(b - a)
    out = np.empty((t.size, spec.J))
    out[:, 0] = 1.0
    for j in range(1, spec.J):
        k = (j + 1) // 2
        trig = np.sin if j % 2 == 1 else np.cos
        out[:, j] = np.sqrt(2.0) * trig(2.0 * np.pi * k * u)
    return scale * out


def _bspline(spec: BasisSpec, t: np.ndarray) -> np.ndarray:
    """Cox-de Boor recursion, vectorized over evaluation points."""
    knots = spec.knots
    n_spans = knots.size - 1
    # degree-0 indicators on half-open spans; the right endpoint belongs to the
    # last nonempty span so the basis stays a partition of unity at t = b
    B = ((knots[:-1][None, :] <= t[:, None]) & (t[:, None] < knots[1:][None, :])).astype(float)
    last = np.flatnonzero(knots[:-1] < knots[1:])[-1]
    B[t >= knots[-1], last] = 1.0
    for p in range(1, 4):
        nb = n_spans - p
        left_den = knots[p:p + nb] - knots[:nb]
        right_den = knots[p + 1:p + 1 + nb] - knots[1:1 + nb]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (t[:, None] - knots[:nb]) / left_den, 0.0)
            right = np.where(right_den > 0, (knots[p + 1:p + 1 + nb] - t[:, None]) / right_den, 0.0)
        B = left * B[:, :nb] + right * B[:, 1:nb + 1]
    return B


def _evaluate(spec: BasisSpec, t: np.ndarray) -> np.ndarray:
    _check_domain(spec, t)
    if spec.family is BasisFamily.FOURIER:
        return _fourier(spec, t)
    return _bspline(spec, t)


def eval_basis(spec: BasisSpec, t: float) -> np.ndarray:
    """Return ``(e_1(t), ..., e_J(t))``.

    Fourier ordering is ``1, sqrt2 sin(2 pi t), sqrt2 cos(2 pi t), sqrt2 sin(4 pi t), ...``.
    """
    return _evaluate(spec, np.atleast_1d(np.asarray(t, dtype=float)))[0]


def eval_matrix(spec: BasisSpec, times: Sequence[float] | np.ndarray) -> BasisMatrix:
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise ValueError("cannot build a basis matrix from zero time points")
    return BasisMatrix(_evaluate(spec, times), times)


def gram(matrices: Sequence[BasisMatrix]) -> GramMatrix:
    """Pooled Gram matrix ``(1/N) sum_n E_n^T E_n``."""
    if len(matrices) == 0:
        raise ValueError("need at least one basis matrix")
    J = matrices[0].J
    F = np.zeros((J, J))
    for bm in matrices:
        if bm.J != J:
            raise ValueError(f"basis dimension mismatch: {bm.J} != {J}")
        F += bm.E.T @ bm.E
    F /= len(matrices)
    F = 0.5 * (F + F.T)
    return GramMatrix(F, len(matrices))


def l2_gram(spec: BasisSpec, nodes_per_span: int = 8) -> np.ndarray:
    """L2 inner products ``int e_j e_k`` over the domain by Gauss-Legendre quadrature.

    Exact for B-splines (piecewise cubic products) and, with enough nodes,
    to machine precision for low-order Fourier terms.
    """
    a, b = spec.domain
    if spec.family is BasisFamily.BSPLINE:
        breaks = np.unique(spec.knots)
        order = nodes_per_span
    else:
        breaks = np.linspace(a, b, max(spec.J, 2) + 1)
        order = max(nodes_per_span, 16)
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    pts = (0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)).ravel()
    wts = (0.5 * (hi - lo) * w[None, :]).ravel()
    E = _evaluate(spec, np.clip(pts, a, b))
    G = (E * wts[:, None]).T @ E
    return 0.5 * (G + G.T)
