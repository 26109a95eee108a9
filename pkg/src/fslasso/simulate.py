"""Synthetic data for function-on-scalar regression experiments.

Coefficient functions and error curves are Matern processes; predictors are
AR(1)-correlated Gaussians, optionally pushed through a Binomial(2, p) link to
mimic 0/1/2 genotype codes. Each subject is observed at a handful of uniform
random times.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import cholesky

from .design import DesignMatrix

__all__ = [
    "MaternSpec",
    "DesignKind",
    "SimScenario",
    "ObservationSet",
    "Truth",
    "ConditioningError",
    "matern_cov",
    "sample_gp",
    "gen_design",
    "gen_truth",
    "gen_subjects",
    "gen_dataset",
    "local_linear_smooth",
    "replicate_rng",
]

TRUTH_GRID = 201
MAX_JITTER = 1e-8


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MaternSpec:
    """Matern process parameters ``(mean, variance, range, nugget, smoothness)``."""

    mean: float = 0.0
    variance: float = 1.0
    range: float = 0.25
    nugget: float = 0.0
    smoothness: float = 2.5

    def __post_init__(self):
        if self.variance < 0 or self.nugget < 0:
            raise ValueError("variance and nugget must be nonnegative")
        if self.range <= 0:
            raise ValueError("range must be positive")
        if self.smoothness not in (1.5, 2.5):
            raise ValueError(f"unsupported smoothness {self.smoothness}; use 1.5 or 2.5")


def matern_cov(spec: MaternSpec, d):
    """Matern covariance at distance ``d`` (scalar or array)."""
    d = np.abs(np.asarray(d, dtype=float))
    s = d / spec.range
    if spec.smoothness == 2.5:
        r5 = np.sqrt(5.0) * s
        c = spec.variance * (1.0 + r5 + r5 ** 2 / 3.0) * np.exp(-r5)
    elif spec.smoothness == 1.5:
        r3 = np.sqrt(3.0) * s
        c = spec.variance * (1.0 + r3) * np.exp(-r3)
    else:  # pragma: no cover - guarded in MaternSpec
        raise ValueError(f"unsupported smoothness {spec.smoothness}")
    c = c + spec.nugget * (d == 0)
    return c if c.ndim else float(c)


def _cov_matrix(spec: MaternSpec, times: np.ndarray) -> np.ndarray:
    return matern_cov(spec, times[:, None] - times[None, :])


def _cholesky_jittered(K: np.ndarray) -> np.ndarray:
    scale = max(float(np.max(np.diag(K))), 1.0)
    jitter = 0.0
    while True:
        try:
            return cholesky(K + jitter * scale * np.eye(K.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            jitter = 1e-14 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise ConditioningError("Matern covariance not positive definite even with jitter 1e-8")


def sample_gp(spec: MaternSpec, times, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw a Matern process at ``times`` as ``mean + L z``.

    With ``size`` given, returns ``size`` independent draws stacked in rows.
    """
    times = np.asarray(times, dtype=float).ravel()
    n_draws = 1 if size is None else size
    z = rng.standard_normal((n_draws, times.size))
    if spec.variance == 0 and spec.nugget == 0:
        out = np.full((n_draws, times.size), spec.mean)
    else:
        L = _cholesky_jittered(_cov_matrix(spec, times))
        out = spec.mean + z @ L.T
    return out[0] if size is None else out


class DesignKind(str, enum.Enum):
    GAUSSIAN_AR = "gaussian_ar"
    BINOMIAL_PROBIT = "binomial_probit"


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting. ``beta_spec`` defaults to variance ``1/I0``."""

    N: int = 100
    I: int = 1000
    I0: int = 10
    rho: float = 0.5
    M_obs: int = 10
    beta_spec: Optional[MaternSpec] = None
    eps_spec: MaternSpec = field(default_factory=lambda: MaternSpec(0.0, 1.0, 0.25, 0.0, 1.5))
    design_kind: DesignKind = DesignKind.GAUSSIAN_AR
    seed: int = 0
    n_test: int = 100

    def __post_init__(self):
        object.__setattr__(self, "design_kind", DesignKind(self.design_kind))
        if self.beta_spec is None:
            var = 1.0 / self.I0 if self.I0 > 0 else 0.0
            object.__setattr__(self, "beta_spec", MaternSpec(0.0, var, 0.25, 0.0, 2.5))
        if isinstance(self.beta_spec, dict):
            object.__setattr__(self, "beta_spec", MaternSpec(**self.beta_spec))
        if isinstance(self.eps_spec, dict):
            object.__setattr__(self, "eps_spec", MaternSpec(**self.eps_spec))
        if not 0 <= self.I0 <= self.I:
            raise ValueError(f"need 0 <= I0 <= I, got I0={self.I0}, I={self.I}")
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.M_obs < 1 or self.N < 1:
            raise ValueError("N and M_obs must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["design_kind"] = self.design_kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SimScenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ObservationSet:
    """Sparse longitudinal responses: per-subject sorted times and values."""

    times: list
    values: list

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must list the same subjects")
        ts, vs = [], []
        for t, v in zip(self.times, self.values):
            t = np.asarray(t, dtype=float).ravel()
            v = np.asarray(v, dtype=float).ravel()
            if t.size != v.size:
                raise ValueError("per-subject times and values differ in length")
            order = np.argsort(t, kind="stable")
            ts.append(t[order])
            vs.append(v[order])
        self.times, self.values = ts, vs

    @property
    def N(self) -> int:
        return len(self.times)

    @property
    def counts(self) -> np.ndarray:
        return np.array([t.size for t in self.times], dtype=int)

    @property
    def t_flat(self) -> np.ndarray:
        return np.concatenate(self.times) if self.times else np.empty(0)

    @property
    def y_flat(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.empty(0)

    @property
    def subject_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.N), self.counts)

    def subset(self, idx) -> "ObservationSet":
        return ObservationSet([self.times[i] for i in idx], [self.values[i] for i in idx])

    def with_values(self, values_flat: np.ndarray) -> "ObservationSet":
        parts = np.split(np.asarray(values_flat, dtype=float), np.cumsum(self.counts)[:-1])
        return ObservationSet(list(self.times), parts)


@dataclass
class Truth:
    """True coefficient functions on a fine grid; zero rows off the support."""

    support: np.ndarray
    grid: np.ndarray
    beta_grid: np.ndarray  # I0 x len(grid), rows aligned with ``support``
    I: int
    _splines: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._splines = [CubicSpline(self.grid, row) for row in self.beta_grid]

    def beta(self, i: int, t) -> np.ndarray:
        """Evaluate ``beta_i(t)``; identically zero for ``i`` off the support."""
        t = np.asarray(t, dtype=float)
        hit = np.flatnonzero(self.support == i)
        if hit.size == 0:
            return np.zeros_like(t)
        return self._splines[hit[0]](t)

    def signal(self, X: np.ndarray, times: Sequence[np.ndarray]) -> list:
        """Noise-free ``sum_i X_ni beta_i(t_nm)`` per subject."""
        out = []
        for n, t in enumerate(times):
            val = np.zeros(t.size)
            for k, i in enumerate(self.support):
                val += X[n, i] * self._splines[k](t)
            out.append(val)
        return out

    def to_dict(self) -> dict:
        return {
            "support": self.support.tolist(),
            "I": self.I,
            "grid": self.grid.tolist(),
            "beta_grid": self.beta_grid.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        return cls(
            np.asarray(d["support"], dtype=int),
            np.asarray(d["grid"], dtype=float),
            np.asarray(d["beta_grid"], dtype=float).reshape(len(d["support"]), -1),
            int(d["I"]),
        )


def replicate_rng(seed: int, replicate: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for (seed, replicate, stream); order-independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replicate), int(stream)]))


def _ar_latent(N: int, I: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((N, I))
    X = np.empty((N, I))
    X[:, 0] = z[:, 0]
    c = np.sqrt(1.0 - rho ** 2)
    for i in range(1, I):
        X[:, i] = rho * X[:, i - 1] + c * z[:, i]
    return X


def gen_design(scenario: SimScenario, rng: np.random.Generator, N: Optional[int] = None) -> DesignMatrix:
    """Raw (unstandardized) predictor matrix for ``N`` subjects."""
    N = scenario.N if N is None else N
    X = _ar_latent(N, scenario.I, scenario.rho, rng)
    if scenario.design_kind is DesignKind.BINOMIAL_PROBIT:
        # p = logit^{-1}(latent), B ~ Binom(2, p)
        p = 1.0 / (1.0 + np.exp(-X))
        X = rng.binomial(2, p).astype(float)
    return DesignMatrix(X, standardized=False)


def gen_truth(scenario: SimScenario, rng: np.random.Generator) -> Truth:
    perm = rng.permutation(scenario.I)
    support = np.sort(perm[: scenario.I0])
    grid = np.linspace(0.0, 1.0, TRUTH_GRID)
    if scenario.I0:
        beta_grid = sample_gp(scenario.beta_spec, grid, rng, size=scenario.I0)
    else:
        beta_grid = np.zeros((0, grid.size))
    return Truth(support, grid, beta_grid, scenario.I)


def gen_subjects(scenario: SimScenario, truth: Truth, rng: np.random.Generator,
                 N: Optional[int] = None) -> tuple[ObservationSet, DesignMatrix]:
    """Fresh subjects (design, times, errors) sharing the given coefficient functions."""
    N = scenario.N if N is None else N
    design = gen_design(scenario, rng, N)
    times = [np.sort(rng.uniform(0.0, 1.0, scenario.M_obs)) for _ in range(N)]
    signal = truth.signal(design.X, times)
    values = [s + sample_gp(scenario.eps_spec, t, rng) for s, t in zip(signal, times)]
    return ObservationSet(times, values), design


def gen_dataset(scenario: SimScenario, rng: np.random.Generator):
    """Draw truth then ``scenario.N`` training subjects.

    Returns ``(observations, design, truth)``.
    """
    truth = gen_truth(scenario, rng)
    obs, design = gen_subjects(scenario, truth, rng)
    return obs, design, truth


def local_linear_smooth(x, y, bandwidth: float, x_eval) -> np.ndarray:
    """Gaussian-kernel local-linear regression of ``y`` on ``x`` at ``x_eval``.

    Reproduces constants and straight lines exactly. Where every kernel weight
    underflows, the bandwidth is doubled locally and a ``RuntimeWarning`` is
    issued.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    x_eval = np.asarray(x_eval, dtype=float).ravel()
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if np.unique(x).size < 2:
        raise ValueError("need at least two distinct x values")
    out = np.empty(x_eval.size)
    h = np.full(x_eval.size, float(bandwidth))
    todo = np.arange(x_eval.size)
    widened = False
    for _ in range(60):
        d = x[None, :] - x_eval[todo, None]
        w = np.exp(-0.5 * (d / h[todo, None]) ** 2)
        s0 = w.sum(1)
        s1 = (w * d).sum(1)
        s2 = (w * d * d).sum(1)
        t0 = (w * y).sum(1)
        t1 = (w * d * y).sum(1)
        det = s0 * s2 - s1 * s1
        ok = (s0 > 1e-300) & (det > 1e-12 * np.maximum(s0 * s2, 1e-300))
        out[todo[ok]] = (s2[ok] * t0[ok] - s1[ok] * t1[ok]) / det[ok]
        todo = todo[~ok]
        if todo.size == 0:
            break
        widened = True
        h[todo] *= 2.0
    else:  # pragma: no cover
        raise RuntimeError("local linear smoother failed to find support")
    if widened:
        warnings.warn("kernel weights underflowed; bandwidth widened at some points", RuntimeWarning)
    return out


def rule_of_thumb_bandwidth(x) -> float:
    """Silverman's ``1.06 sd(x) n^{-1/5}``."""
    x = np.asarray(x, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


def true_coefficients(truth: Truth, project: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a grid-to-coefficients projection to each true function; rows in full I."""
    rows = [project(truth.grid, b) for b in truth.beta_grid]
    J = rows[0].size if rows else np.asarray(project(truth.grid, np.zeros_like(truth.grid))).size
    B = np.zeros((truth.I, J))
    for k, i in enumerate(truth.support):
        B[i] = rows[k]
    return B
