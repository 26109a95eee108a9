import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fslasso.design import DenseDesign, DesignMatrix, build_sparse_design
from fslasso.basis import BasisMatrix
from fslasso.solver import (Algorithm, CoefficientMatrix, DivergenceError, SolverConfig, fit, group_soft_threshold,
                            kkt_residual, lambda_max, objective_value)

from conftest import dense_instance, group_lasso_oracle, sparse_instance


def scalar_design():
    # A = (1, 1)^T, y = (1, 1)
    return DenseDesign(np.ones((2, 1)), np.ones((2, 1)))


class TestSoftThreshold:
    def test_boundary(self):
        np.testing.assert_array_equal(group_soft_threshold([3, 4], 5), [0, 0])

    def test_half(self):
        np.testing.assert_allclose(group_soft_threshold([3, 4], 2.5), [1.5, 2.0])

    def test_zero(self):
        np.testing.assert_array_equal(group_soft_threshold(np.zeros(3), 0.7), 0)

    def test_negative(self):
        with pytest.raises(ValueError):
            group_soft_threshold([1.0], -1)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=4), st.floats(0, 10))
    def test_prox_optimality(self, v, t):
        v = np.array(v)
        p = group_soft_threshold(v, t)
        # prox of t||.|| minimizes 1/2|x-v|^2 + t|x|; compare against nearby points
        f = lambda x: 0.5 * np.sum((x - v) ** 2) + t * np.linalg.norm(x)
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert f(p) <= f(p + 1e-3 * rng.standard_normal(v.size)) + 1e-12


class TestObjective:
    def test_zero_coefficients(self, rng):
        d = sparse_instance(rng)
        assert objective_value(d, np.zeros((d.I, d.J)), 1.0) == pytest.approx(0.5 * d.y @ d.y)

    def test_least_squares_zero(self):
        d = build_sparse_design(DesignMatrix(np.array([[1.0]])), [BasisMatrix(np.eye(2), np.zeros(2))], [[3.0, 4.0]])
        assert objective_value(d, np.array([[3.0, 4.0]]), 0.0) == 0.0

    def test_matches_materialized(self, rng):
        d = sparse_instance(rng, N=5, I=3, J=2)
        B = rng.standard_normal((3, 2))
        A = d.materialize()
        ref = 0.5 * np.sum((d.y - A @ B.ravel()) ** 2) + 0.4 * np.linalg.norm(B, axis=1).sum()
        assert objective_value(d, B, 0.4) == pytest.approx(ref, rel=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            objective_value(sparse_instance(rng), np.zeros((2, 2)), 1.0)


class TestCoefficientMatrix:
    def test_active_set_and_norm(self):
        c = CoefficientMatrix(np.array([[0, 0], [3, 4], [0, 1e-300]]))
        assert c.active_set == (1, 2)
        assert c.group_norm == pytest.approx(5.0)
        with pytest.raises(ValueError):
            c.B[0, 0] = 1.0

    def test_not_2d(self):
        with pytest.raises(ValueError):
            CoefficientMatrix(np.ones(3))


class TestFit:
    @pytest.mark.parametrize("alg", ["bcd", "apg"])
    def test_above_lambda_max_is_zero(self, rng, alg):
        d = sparse_instance(rng, N=8, I=5, J=3)
        res = fit(d, lambda_max(d) * 1.0001, SolverConfig(algorithm=alg))
        assert res.B.active_set == () and res.converged
        if alg == "bcd":
            assert res.iterations <= 2

    @pytest.mark.parametrize("alg", ["bcd", "apg"])
    def test_scalar_lasso(self, alg):
        res = fit(scalar_design(), 1.0, SolverConfig(algorithm=alg, kkt_rel=1e-12))
        assert res.B.B[0, 0] == pytest.approx(0.5, abs=1e-8)

    @pytest.mark.parametrize("kind", ["sparse", "dense"])
    def test_matches_oracle(self, rng, kind):
        d = sparse_instance(rng, N=8, I=4, J=2) if kind == "sparse" else dense_instance(rng, N=8, I=4, J=2)
        lam = 0.3 * lambda_max(d)
        res = fit(d, lam)
        val, B_ref = group_lasso_oracle(d, lam)
        assert res.objective == pytest.approx(val, rel=1e-6)
        ref_active = tuple(np.flatnonzero(np.linalg.norm(B_ref, axis=1) > 1e-6))
        assert res.B.active_set == ref_active
        assert res.kkt_residual <= 1e-6 * lambda_max(d)

    def test_negative_lambda(self, rng):
        with pytest.raises(ValueError):
            fit(sparse_instance(rng), -1.0)

    def test_warm_start_shape(self, rng):
        with pytest.raises(ValueError):
            fit(sparse_instance(rng), 1.0, SolverConfig(warm_start=CoefficientMatrix(np.zeros((1, 1)))))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(kkt_rel=0)
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
        with pytest.raises(ValueError):
            SolverConfig(algorithm="admm")

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        d = DenseDesign(np.ones((2, 1)), np.array([[1e200], [1e200]]))
        with pytest.raises(DivergenceError):
            fit(d, 1.0)

    def test_monotone_descent(self, rng):
        d = sparse_instance(rng, N=10, I=6, J=3, M=4)
        lam = 0.1 * lambda_max(d)
        objs = [fit(d, lam, SolverConfig(max_iters=k)).objective for k in range(1, 15)]
        assert np.all(np.diff(objs) <= 1e-12 * abs(objs[0]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.05, 0.9))
    def test_algorithms_agree(self, seed, frac):
        rng = np.random.default_rng(seed)
        d = sparse_instance(rng, N=int(rng.integers(3, 9)), I=int(rng.integers(1, 6)), J=int(rng.integers(1, 4)))
        lam = frac * lambda_max(d)
        a = fit(d, lam, SolverConfig(kkt_rel=1e-10))
        b = fit(d, lam, SolverConfig(algorithm=Algorithm.APG, kkt_rel=1e-10, max_iters=200_000))
        assert a.objective == pytest.approx(b.objective, rel=1e-7, abs=1e-12)
        # active sets compared away from breakpoints only
        G = d.adjoint(d.y - d.apply(a.B.B))
        margin = np.abs(np.linalg.norm(G, axis=1) - lam)
        inactive = np.setdiff1d(np.arange(d.I), a.B.active_set)
        if inactive.size == 0 or margin[inactive].min() > 1e-3 * lam:
            small = np.linalg.norm(a.B.B, axis=1)
            if not a.B.active_set or small[list(a.B.active_set)].min() > 1e-4:
                assert set(a.B.active_set) == set(np.flatnonzero(np.linalg.norm(b.B.B, axis=1) > 1e-6))


class TestKkt:
    def test_zero_above_lambda_max(self, rng):
        d = sparse_instance(rng)
        assert kkt_residual(d, np.zeros((d.I, d.J)), lambda_max(d)) == 0.0

    def test_scalar_optimum(self):
        assert kkt_residual(scalar_design(), np.array([[0.5]]), 1.0) == pytest.approx(0, abs=1e-10)

    def test_perturbation_detected(self, rng):
        d = sparse_instance(rng, N=8, I=4, J=2)
        lam = 0.2 * lambda_max(d)
        B = fit(d, lam, SolverConfig(kkt_rel=1e-10)).B.B.copy()
        i = fit(d, lam).B.active_set[0]
        B[i] += 0.1
        assert kkt_residual(d, B, lam) > 0

    def test_kkt_implies_near_optimal(self, rng):
        for _ in range(5):
            d = sparse_instance(rng, N=8, I=4, J=2)
            lam = 0.3 * lambda_max(d)
            opt, _ = group_lasso_oracle(d, lam)
            res = fit(d, lam, SolverConfig(kkt_rel=1e-2, max_iters=3))
            eps = res.kkt_residual
            assert res.objective - opt <= eps * res.B.group_norm + eps ** 2 + 1e-9
