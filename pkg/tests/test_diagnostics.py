import math

import numpy as np
import pytest

from fslasso.basis import BasisSpec, eval_matrix, gram
from fslasso.design import DenseDesign, DesignMatrix, build_sparse_design
from fslasso.harness.diagnostics import (matern_operator_eigenvalues, max_noise_cov_op, re_diagnostic,
                                         suggest_lambda_dense, suggest_lambda_sparse)
from fslasso.simulate import MaternSpec, SimScenario, gen_design, replicate_rng, sample_gp


def scalar_design(X):
    return DenseDesign(X, np.zeros((X.shape[0], 1)))


class TestReDiagnostic:
    def test_isometry(self, rng):
        # ||A w||^2 = N ||w||^2 for X = sqrt(N) I
        N = 8
        d = scalar_design(np.sqrt(N) * np.eye(N))
        rep = re_diagnostic(d, 2, 50, rng)
        assert rep.alpha_hat == pytest.approx(1.0)
        np.testing.assert_allclose(rep.running_min, 1.0)

    def test_duplicated_column(self, rng):
        x = rng.standard_normal(30)
        d = scalar_design(np.c_[x, x])
        rep = re_diagnostic(d, 1, 5000, rng)
        assert rep.running_min[9] > rep.alpha_hat
        assert rep.alpha_hat < 1e-3

    def test_iid_gaussian(self, rng):
        d = scalar_design(rng.standard_normal((200, 50)))
        assert re_diagnostic(d, 5, 10_000, rng).alpha_hat > 0.1

    def test_running_min_prefix(self):
        d = scalar_design(np.random.default_rng(1).standard_normal((20, 10)))
        a = re_diagnostic(d, 3, 50, np.random.default_rng(5))
        b = re_diagnostic(d, 3, 200, np.random.default_rng(5))
        np.testing.assert_array_equal(b.running_min[:50], a.running_min)
        assert np.all(np.diff(b.running_min) <= 0) and b.alpha_hat >= 0
        assert b.cone_spec == (3, 3.0)

    def test_errors(self, rng):
        d = scalar_design(np.eye(3))
        with pytest.raises(ValueError):
            re_diagnostic(d, 1, 0, rng)
        with pytest.raises(ValueError):
            re_diagnostic(d, 4, 10, rng)


class TestSuggestSparse:
    def test_plug_in(self):
        N = 50
        val = suggest_lambda_sparse(N, 1.0, 2, 2, delta=1.0, T_norm=0.0, sigma_op=1.0)
        assert val == pytest.approx(2 * math.sqrt(N * (4 + 3 * math.log(4))))

    def test_scaling(self):
        a = suggest_lambda_sparse(100, 2.0, 5, 100, sigma_op=0.5)
        b = suggest_lambda_sparse(200, 2.0, 5, 100, sigma_op=0.5)
        assert b / a == pytest.approx(math.sqrt(2))

    def test_monotone(self):
        base = dict(N=100, F_op=1.0, J=5, I=100, sigma_op=1.0)
        v = suggest_lambda_sparse(**base)
        assert suggest_lambda_sparse(**{**base, "I": 1000}) > v
        assert suggest_lambda_sparse(**{**base, "T_norm": 0.1}) > v
        assert suggest_lambda_sparse(**{**base, "sigma_op": 2.0}) > v

    def test_errors(self):
        with pytest.raises(ValueError):
            suggest_lambda_sparse(10, 1.0, 2, 2)
        with pytest.raises(ValueError):
            suggest_lambda_sparse(10, 1.0, 2, 2, sigma_op=0.0)
        with pytest.raises(ValueError):
            suggest_lambda_sparse(10, 1.0, 2, 2, delta=0.0, sigma_op=1.0)

    def test_covers_noise_event(self):
        # lambda >= 2 max_i ||A_i^T eps|| for Matern errors on a simulated instance
        sc = SimScenario(N=100, I=200, I0=5)
        rng = replicate_rng(4, 0, 0)
        X = gen_design(sc, rng).standardize()
        spec = BasisSpec("bspline", 10)
        times = [np.sort(rng.uniform(0, 1, sc.M_obs)) for _ in range(sc.N)]
        bases = [eval_matrix(spec, t) for t in times]
        lam = suggest_lambda_sparse(sc.N, gram(bases).op_norm, spec.J, sc.I, 0.05,
                                    sigma_op=max_noise_cov_op(sc.eps_spec, times))
        d = build_sparse_design(X, bases, [np.zeros(sc.M_obs)] * sc.N)
        hits = 0
        for _ in range(100):
            eps = np.concatenate([sample_gp(sc.eps_spec, t, rng) for t in times])
            hits += lam >= 2 * np.linalg.norm(d.adjoint(eps), axis=1).max()
        assert hits >= 95


class TestSuggestDense:
    def test_plug_in(self):
        N, I = 40, 10
        assert suggest_lambda_dense([1.0], N, I, delta=I / math.e) == pytest.approx(2 * math.sqrt(5 * N))

    def test_homogeneity(self):
        L = np.array([3.0, 1.0, 0.2])
        assert suggest_lambda_dense(4 * L, 50, 100) == pytest.approx(2 * suggest_lambda_dense(L, 50, 100))

    def test_monotone(self):
        L = np.array([3.0, 1.0, 0.2])
        v = suggest_lambda_dense(L, 50, 100)
        assert suggest_lambda_dense(L, 51, 100) > v
        assert suggest_lambda_dense(L, 50, 1000) > v
        assert suggest_lambda_dense(np.r_[L, 0.1], 50, 100) > v

    def test_errors(self):
        with pytest.raises(ValueError):
            suggest_lambda_dense([], 10, 10)
        with pytest.raises(ValueError):
            suggest_lambda_dense([-1.0], 10, 10)

    def test_covers_noise_event(self, rng):
        N, I = 100, 200
        Lam = matern_operator_eigenvalues(MaternSpec(smoothness=1.5), n_grid=400)[:200]
        X = DesignMatrix(rng.standard_normal((N, I))).standardize().X
        lam = suggest_lambda_dense(Lam, N, I, 0.05)
        hits = 0
        for _ in range(100):
            eps = rng.standard_normal((N, Lam.size)) * np.sqrt(Lam)
            hits += np.linalg.norm(X.T @ eps, axis=1).max() <= lam / 2
        assert hits >= 95


class TestMaternHelpers:
    def test_eigenvalues_sum_to_variance(self):
        w = matern_operator_eigenvalues(MaternSpec(variance=2.0, smoothness=2.5), n_grid=500)
        assert w.sum() == pytest.approx(2.0, rel=1e-10)
        assert np.all(np.diff(w) <= 1e-12)

    def test_noise_op_single_point(self):
        assert max_noise_cov_op(MaternSpec(variance=1.5), [np.array([0.3])]) == pytest.approx(1.5)

    def test_noise_op_grows_with_points(self):
        spec = MaternSpec()
        a = max_noise_cov_op(spec, [np.array([0.1, 0.9])])
        b = max_noise_cov_op(spec, [np.array([0.1, 0.12])])
        assert 1.0 <= a < b <= 2.0
