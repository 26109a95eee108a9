"""Theory-scale diagnostics: restricted-eigenvalue estimates and penalty suggesters.

The penalty suggesters evaluate the closed-form lower bounds on the
penalty under which the oracle inequalities hold. They are deliberately
conservative and are meant as diagnostics, not as practical selectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..design import GroupDesign
from ..simulate import MaternSpec, matern_cov

__all__ = [
    "ReDiagnostic",
    "re_diagnostic",
    "suggest_lambda_sparse",
    "suggest_lambda_dense",
    "max_noise_cov_op",
    "matern_operator_eigenvalues",
]

CONE_FACTOR = 3.0


@dataclass(frozen=True)
class ReDiagnostic:
    """Monte-Carlo restricted-eigenvalue estimate.

    ``alpha_hat`` is the minimum of ``||A vec(W^T)||^2 / (N ||W||_F^2)`` over
    the sampled cone members, so it is an *upper* estimate of the true
    constant. ``running_min[k]`` is the minimum over the first ``k + 1``
    samples.
    """

    alpha_hat: float
    samples: int
    I0: int
    cone_factor: float
    running_min: np.ndarray

    @property
    def cone_spec(self) -> tuple:
        return (self.I0, self.cone_factor)


def _cone_member(I: int, J: int, I0: int, rng: np.random.Generator) -> np.ndarray:
    S = rng.choice(I, size=I0, replace=False)
    W = np.zeros((I, J))
    W[S] = rng.standard_normal((I0, J))
    rest = np.setdiff1d(np.arange(I), S)
    if rest.size:
        budget = rng.uniform() * CONE_FACTOR * np.linalg.norm(W[S], axis=1).sum()
        dirs = rng.standard_normal((rest.size, J))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        share = rng.exponential(size=rest.size)
        W[rest] = dirs * (budget * share / share.sum())[:, None]
    return W


def re_diagnostic(design: GroupDesign, I0: int, samples: int, rng: np.random.Generator) -> ReDiagnostic:
    """Sample cone directions and return the smallest quadratic-form ratio.

    Each draw picks a support ``S`` of size ``I0``, Gaussian rows on ``S``
    and rows off ``S`` whose group norms sum to ``u * 3 * ||W_S||_{1,2}`` with
    ``u ~ U[0, 1]`` (random directions, random split across groups).
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    if not 1 <= I0 <= design.I:
        raise ValueError(f"I0 must lie in [1, {design.I}]")
    ratios = np.empty(samples)
    for k in range(samples):
        W = _cone_member(design.I, design.J, I0, rng)
        v = design.apply(W)
        ratios[k] = float(v @ v) / (design.N * float(np.sum(W * W)))
    running = np.minimum.accumulate(ratios)
    return ReDiagnostic(float(running[-1]), samples, I0, CONE_FACTOR, running)


def suggest_lambda_sparse(N: int, F_op: float, J: int, I: int, delta: float = 0.05,
                          T_norm: float = 0.0, sigma_op: Optional[float] = None) -> float:
    """Penalty lower bound for the sparse estimator.

    ``2 sqrt(N ||F||_op) (||T||_2 + sqrt(sigma_op (2 J + 3 log(2 I / delta))))``

    Parameters
    ----------
    F_op : float
        Operator norm of the pooled basis Gram matrix ``(1/N) sum E_n^T E_n``.
    sigma_op : float
        Bound on ``max_n ||Sigma_n||_op``, the within-subject error
        covariance. A pilot residual variance is a common stand-in.
    T_norm : float
        Norm of the basis truncation error vector (0 when the truth lies in
        the span).
    """
    if sigma_op is None or not sigma_op > 0:
        raise ValueError("sigma_op must be a positive variance bound")
    if N < 1 or J < 1 or I < 1:
        raise ValueError("N, J and I must be positive")
    if not 0 < delta <= 2 * I:
        raise ValueError("delta must lie in (0, 2 I]")
    if F_op < 0 or T_norm < 0:
        raise ValueError("F_op and T_norm must be nonnegative")
    return 2.0 * math.sqrt(N * F_op) * (T_norm + math.sqrt(sigma_op * (2 * J + 3 * math.log(2 * I / delta))))


def suggest_lambda_dense(Lambda, N: int, I: int, delta: float = 0.05) -> float:
    """Penalty lower bound for the dense estimator.

    ``2 sqrt(N) sqrt(||L||_1 + 2 ||L||_2 sqrt(log(I/delta)) + 2 ||L||_inf log(I/delta))``
    where ``L`` holds the error covariance eigenvalues.
    """
    lam = np.asarray(Lambda, dtype=float).ravel()
    if lam.size == 0:
        raise ValueError("empty eigenvalue vector")
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    if N < 1 or I < 1 or not 0 < delta < I:
        raise ValueError("need N >= 1 and 0 < delta < I")
    L = math.log(I / delta)
    inner = lam.sum() + 2.0 * float(np.linalg.norm(lam)) * math.sqrt(L) + 2.0 * float(lam.max()) * L
    return 2.0 * math.sqrt(N) * math.sqrt(inner)


def max_noise_cov_op(spec: MaternSpec, times) -> float:
    """``max_n ||Sigma_n||_op`` for Matern errors observed at each subject's times."""
    best = 0.0
    for t in times:
        t = np.asarray(t, dtype=float)
        K = matern_cov(spec, np.abs(t[:, None] - t[None, :]))
        best = max(best, float(np.linalg.eigvalsh(K)[-1]))
    return best


def matern_operator_eigenvalues(spec: MaternSpec, n_grid: int = 1000, domain=(0.0, 1.0)) -> np.ndarray:
    """Covariance-operator eigenvalues on ``L2(domain)`` by midpoint quadrature, nonincreasing."""
    a, b = domain
    h = (b - a) / n_grid
    t = a + h * (np.arange(n_grid) + 0.5)
    K = matern_cov(spec, np.abs(t[:, None] - t[None, :]))
    w = np.linalg.eigvalsh(K * h)[::-1]
    return np.maximum(w, 0.0)
