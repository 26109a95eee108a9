import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fslasso.basis import BasisMatrix
from fslasso.design import DenseDesign, DesignMatrix, build_sparse_design
from fslasso.solver import SolverConfig, fit, lambda_max
from fslasso.tuning import (Criterion, choose_screening_lambda, criterion_score, cv_folds, fit_path, lambda_grid,
                            refit_and_sigma2, screen, select)

from conftest import dense_instance, sparse_instance


def identity_design(y=(3.0, 4.0)):
    return build_sparse_design(DesignMatrix(np.array([[1.0]])), [BasisMatrix(np.eye(2), np.zeros(2))], [list(y)])


def screening_instance(rng, N=None, I=None):
    N = N or int(rng.integers(5, 15))
    I = I or int(rng.integers(2, 51))
    return sparse_instance(rng, N=N, I=I, J=int(rng.integers(1, 4)), M=int(rng.integers(2, 6)))


class TestLambdaMax:
    def test_identity(self):
        assert lambda_max(identity_design()) == pytest.approx(5.0)

    def test_zero_response(self):
        assert lambda_max(identity_design((0.0, 0.0))) == 0.0

    def test_boundary(self, rng):
        d = sparse_instance(rng, N=8, I=5, J=2)
        lm = lambda_max(d)
        above = fit(d, lm * (1 + 1e-9))
        assert above.B.active_set == () and above.kkt_residual == 0.0
        assert len(fit(d, lm * (1 - 1e-3)).B.active_set) >= 1


class TestGrid:
    def test_shape(self, rng):
        d = sparse_instance(rng)
        g = lambda_grid(d)
        assert g.size == 100 and g[0] == pytest.approx(lambda_max(d))
        assert g[-1] == pytest.approx(0.01 * lambda_max(d))
        np.testing.assert_allclose(np.diff(np.log(g)), np.log(0.01) / 99)

    def test_single_point(self, rng):
        d = sparse_instance(rng)
        assert lambda_grid(d, 1)[0] == lambda_max(d)

    def test_zero_response(self):
        with pytest.raises(ValueError):
            lambda_grid(identity_design((0.0, 0.0)))


class TestScreen:
    def test_orthogonal_group_dropped(self):
        # group 1 is orthogonal to y
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        d = DenseDesign(X, np.array([[1.0, 0.0], [0.0, 0.0]]))
        lam0 = lambda_max(d)
        rep = screen(d, lam0 * 0.9)
        assert 1 in rep.dropped and 0 in rep.kept

    def test_argmax_kept(self, rng):
        d = sparse_instance(rng, N=10, I=20, J=2)
        best = int(np.argmax(np.linalg.norm(d.adjoint(d.y), axis=1)))
        for frac in (1.0, 0.99, 0.5, 1e-3):
            assert best in screen(d, frac * lambda_max(d)).kept

    def test_above_lambda0(self, rng):
        d = sparse_instance(rng, N=5, I=4)
        assert screen(d, 2 * lambda_max(d)).kept == ()

    def test_nonpositive(self, rng):
        with pytest.raises(ValueError):
            screen(sparse_instance(rng), 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_safe_at_half(self, seed):
        rng = np.random.default_rng(seed)
        d = screening_instance(rng)
        lam = 0.5 * lambda_max(d)
        rep = screen(d, lam)
        full = fit(d, lam, SolverConfig(kkt_rel=1e-9))
        assert not set(rep.dropped) & set(full.B.active_set)


class TestChooseScreeningLambda:
    def test_keep_all(self, rng):
        d = sparse_instance(rng, N=6, I=5)
        with pytest.warns(RuntimeWarning):
            lam = choose_screening_lambda(d, 5)
        assert lam > 0

    def test_s1_keeps_argmax(self, rng):
        d = sparse_instance(rng, N=8, I=10)
        best = int(np.argmax(np.linalg.norm(d.adjoint(d.y), axis=1)))
        assert best in screen(d, choose_screening_lambda(d, 1)).kept

    def test_monotone_spot_check(self, rng):
        d = sparse_instance(rng, N=20, I=10, J=2, M=4)
        lam = choose_screening_lambda(d, 3)
        assert len(screen(d, lam).kept) <= 3
        assert len(screen(d, lam * 1.01).kept) <= 3

    def test_bad_s(self, rng):
        with pytest.raises(ValueError):
            choose_screening_lambda(sparse_instance(rng), 0)


class TestFitPath:
    def test_single_point(self, rng):
        d = sparse_instance(rng)
        p = fit_path(d, [lambda_max(d)])
        assert len(p.fits) == 1 and p.fits[0].B.active_set == ()

    def test_warm_matches_cold(self, rng):
        d = sparse_instance(rng, N=12, I=8, J=3, M=4)
        grid = lambda_grid(d, 20, 0.05)
        p = fit_path(d, grid)
        for lam, fr in zip(grid, p.fits):
            cold = fit(d, lam)
            assert fr.objective == pytest.approx(cold.objective, rel=1e-7)

    def test_objective_monotone_in_lambda(self, rng):
        d = sparse_instance(rng, N=12, I=8, J=3, M=4)
        p = fit_path(d, lambda_grid(d, 30, 0.01), SolverConfig(kkt_rel=1e-9))
        objs = np.array([f.objective for f in p.fits])
        assert np.all(np.diff(objs) <= 1e-9 * objs[0])

    def test_entry_and_ranking(self, rng):
        d = sparse_instance(rng, N=12, I=8, J=2, M=4)
        p = fit_path(d, lambda_grid(d, 30))
        for i in range(d.I):
            if np.isfinite(p.entry_order[i]):
                k = int(p.entry_order[i])
                assert i in p.fits[k].B.active_set
                assert all(i not in f.B.active_set for f in p.fits[:k])
                assert p.entry_lambda[i] == p.lambdas[k]
        order = p.entry_order[p.ranking()]
        assert np.all(np.diff(order[np.isfinite(order)]) >= 0)

    def test_invalid_grid(self, rng):
        d = sparse_instance(rng)
        with pytest.raises(ValueError):
            fit_path(d, [1.0, 2.0])
        with pytest.raises(ValueError):
            fit_path(d, [])
        with pytest.raises(ValueError):
            fit_path(d, [1.0, -1.0])

    def test_max_active_truncates(self, rng):
        d = sparse_instance(rng, N=15, I=12, J=2, M=4)
        p = fit_path(d, lambda_grid(d, 40, 1e-3), max_active=3)
        assert p.truncated and len(p.fits[-1].B.active_set) > 3
        assert all(len(f.B.active_set) <= 3 for f in p.fits[:-1])
        assert p.lambdas.size == len(p.fits)

    def test_non_convergence_flagged(self, rng):
        d = sparse_instance(rng, N=12, I=8, J=3, M=4)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            p = fit_path(d, lambda_grid(d, 10), SolverConfig(max_iters=1, kkt_rel=1e-12))
        assert not p.all_converged and len(p.fits) == 10 and w

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_screened_path_matches_unscreened(self, seed):
        rng = np.random.default_rng(seed)
        d = screening_instance(rng)
        grid = lambda_grid(d, 15, 0.05)
        a = fit_path(d, grid)
        b = fit_path(d, grid, use_screening=False)
        for fa, fb in zip(a.fits, b.fits):
            assert fa.objective == pytest.approx(fb.objective, rel=1e-6)


class TestRefit:
    def test_empty(self):
        d = DenseDesign(np.ones((2, 1)), np.array([[1.0, 2.0], [1.0, 2.0]]))
        B, s2 = refit_and_sigma2(d, [])
        assert s2 == pytest.approx(2.5) and not B.B.any()

    def test_noiseless(self, rng):
        d = sparse_instance(rng, N=20, I=6, J=2, M=4)
        B = np.zeros((6, 2))
        B[[1, 4]] = rng.standard_normal((2, 2))
        d = d.with_response(d.apply(B))
        Bh, s2 = refit_and_sigma2(d, [4, 1])
        assert s2 <= 1e-10
        np.testing.assert_allclose(Bh.B, B, atol=1e-8)

    @pytest.mark.parametrize("kind", ["sparse", "dense"])
    def test_normal_equations(self, rng, kind):
        d = sparse_instance(rng, N=10, I=5, J=2, M=3) if kind == "sparse" else dense_instance(rng, N=10, I=5, J=2)
        active = [0, 3]
        A = d.materialize()
        cols = np.concatenate([np.arange(i * 2, i * 2 + 2) for i in active])
        b = np.linalg.solve(A[:, cols].T @ A[:, cols], A[:, cols].T @ d.y)
        Bh, s2 = refit_and_sigma2(d, active)
        np.testing.assert_allclose(Bh.B[active].ravel(), b, atol=1e-10)
        assert s2 == pytest.approx(np.sum((d.y - A[:, cols] @ b) ** 2) / d.n_rows)


class TestCriterion:
    def test_unit_sigma(self):
        assert criterion_score(1.0, 500, 30, 4, 100, 1000, "bic") == pytest.approx(30 * 4 * math.log(100))

    def test_aic(self):
        assert criterion_score(1.0, 500, 30, 4, 100, 1000, "aic") == pytest.approx(30 * 4 * 2)

    def test_ebic_empty_equals_bic(self):
        assert criterion_score(0.7, 500, 30, 0, 100, 1000, Criterion("ebic", gamma=0.2)) == \
            pytest.approx(criterion_score(0.7, 500, 30, 0, 100, 1000, "bic"))

    def test_ebic_term(self):
        diff = criterion_score(0.7, 50, 3, 2, 10, 20, "ebic") - criterion_score(0.7, 50, 3, 2, 10, 20, "bic")
        assert diff == pytest.approx(2 * 0.2 * math.log(190))

    def test_exact_fit(self):
        assert criterion_score(0.0, 5, 1, 1, 5, 5) == -math.inf

    def test_errors(self):
        with pytest.raises(ValueError):
            criterion_score(1.0, 5, 1, 1, 5, 5, "cv")
        with pytest.raises(ValueError):
            criterion_score(-1.0, 5, 1, 1, 5, 5)
        with pytest.raises(ValueError):
            Criterion.parse("hqic")


class TestSelect:
    def test_single_point(self, rng):
        d = sparse_instance(rng)
        p = fit_path(d, [0.5 * lambda_max(d)])
        assert select(p, "bic", d).chosen_index == 0

    def test_all_zero_prefers_largest(self, rng):
        d = sparse_instance(rng, N=8, I=4)
        lm = lambda_max(d)
        p = fit_path(d, [4 * lm, 3 * lm, 2 * lm])
        rep = select(p, "bic", d)
        assert rep.chosen_index == 0 and rep.active_set == ()

    def test_matches_exhaustive_scoring(self, rng):
        d = sparse_instance(rng, N=40, I=10, J=2, M=5)
        B = np.zeros((10, 2))
        B[:2] = 2.0
        d = d.with_response(d.apply(B) + 0.5 * rng.standard_normal(d.n_rows))
        p = fit_path(d, lambda_grid(d, 30))
        rep = select(p, "bic", d)
        manual = []
        for f in p.fits:
            _, s2 = refit_and_sigma2(d, f.B.active_set)
            manual.append(criterion_score(s2, d.n_rows, d.J, len(f.B.active_set), d.N, d.I, "bic"))
        assert rep.chosen_index == int(np.argmin(manual))
        assert set(rep.active_set) >= {0, 1}
        assert rep.penalized_B.active_set == p.fits[rep.chosen_index].B.active_set

    def test_saturated_refits_excluded(self, rng):
        d = sparse_instance(rng, N=6, I=10, J=3, M=2)
        p = fit_path(d, lambda_grid(d, 20, 0.02), SolverConfig(kkt_rel=1e-4))
        rep = select(p, "bic", d)
        for k, f in enumerate(p.fits):
            if len(f.B.active_set) * d.J > 0.5 * d.n_rows:
                assert rep.scores[k] == math.inf
        assert np.isfinite(rep.scores[rep.chosen_index])

    def test_cv(self, rng):
        d = sparse_instance(rng, N=20, I=6, J=2, M=4)
        p = fit_path(d, lambda_grid(d, 10))
        rep = select(p, Criterion("cv", folds=4, seed=3), d)
        assert rep.scores.shape == (10,) and np.all(np.isfinite(rep.scores))
        again = select(p, Criterion("cv", folds=4, seed=3), d)
        np.testing.assert_array_equal(rep.scores, again.scores)

    def test_empty_path(self, rng):
        from fslasso.tuning import PathFit
        p = PathFit(np.array([]), (), np.array([]), np.array([]))
        with pytest.raises(ValueError):
            select(p, "bic", sparse_instance(rng))


class TestCvFolds:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 1000))
    def test_partition(self, N, k, seed):
        if k > N:
            with pytest.raises(ValueError):
                cv_folds(N, k, seed)
            return
        folds = cv_folds(N, k, seed)
        allidx = np.concatenate(folds)
        assert len(folds) == k
        np.testing.assert_array_equal(np.sort(allidx), np.arange(N))
        assert max(map(len, folds)) - min(map(len, folds)) <= 1

    def test_deterministic(self):
        a, b = cv_folds(20, 4, 5), cv_folds(20, 4, 5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
