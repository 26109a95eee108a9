"""Shared builders and independent oracles for the test suite."""

import numpy as np
import pytest

from fslasso.basis import BasisSpec, eval_matrix
from fslasso.design import DesignMatrix, DenseDesign, build_sparse_design

ACCEPTANCE_KEY = pytest.StashKey[list]()


def sparse_instance(rng, N=6, I=4, J=2, M=3, family="fourier"):
    spec = BasisSpec(family, J)
    X = DesignMatrix(rng.standard_normal((N, I)))
    times = [np.sort(rng.uniform(0, 1, M)) for _ in range(N)]
    ys = [rng.standard_normal(M) for _ in range(N)]
    return build_sparse_design(X, [eval_matrix(spec, t) for t in times], ys)


def dense_instance(rng, N=6, I=4, J=2):
    return DenseDesign(rng.standard_normal((N, I)), rng.standard_normal((N, J)))


def group_lasso_oracle(design, lam):
    """Interior-point solution of the group LASSO on the materialized design."""
    cp = pytest.importorskip("cvxpy")
    A = design.materialize()
    I, J = design.I, design.J
    b = cp.Variable(I * J)
    pen = sum(cp.norm(b[i * J:(i + 1) * J], 2) for i in range(I))
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(design.y - A @ b) + lam * pen))
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return float(prob.value), np.asarray(b.value).reshape(I, J)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
