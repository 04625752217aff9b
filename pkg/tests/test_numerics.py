import math

import numpy as np
import pytest

from histgdp.errors import ValidationError
from histgdp.numerics import (
    Matrix,
    chi2_sf,
    kruskal_wallis,
    mae_relative,
    ols_fit,
    pearson,
    quantile,
    r2_log,
    spearman,
    standardize,
    svd,
)


class TestMatrix:
    def test_rejects_nan(self):
        with pytest.raises(ValidationError):
            Matrix(np.array([[1.0, np.nan]]))

    def test_rejects_inf(self):
        with pytest.raises(ValidationError):
            Matrix(np.array([[np.inf], [0.0]]))

    def test_label_length_checked(self):
        with pytest.raises(ValidationError):
            Matrix(np.ones((2, 2)), col_labels=("a",))

    def test_shape(self):
        m = Matrix(np.ones((3, 2)), row_labels=("a", "b", "c"))
        assert m.shape == (3, 2)


class TestSvd:
    def test_identity(self):
        res = svd(np.eye(2))
        assert np.allclose(res.s, [1.0, 1.0])

    def test_diagonal(self):
        res = svd(np.diag([3.0, 2.0]))
        assert np.allclose(res.s, [3.0, 2.0])
        assert np.allclose(np.abs(res.u), np.eye(2), atol=1e-12)
        assert np.allclose(np.abs(res.v), np.eye(2), atol=1e-12)

    def test_rank_deficient_column(self):
        # N'N = diag(25, 0), so singular values are (5, 0).
        a = np.array([[3.0, 0.0], [4.0, 0.0], [0.0, 0.0]])
        res = svd(a)
        assert np.allclose(res.s, [5.0, 0.0], atol=1e-12)
        # orthonormal completion keeps U'U = I even at rank deficiency
        assert np.max(np.abs(res.u.T @ res.u - np.eye(2))) <= 1e-10

    @pytest.mark.parametrize("seed", range(8))
    def test_reconstruction_and_orthonormality(self, seed):
        rng = np.random.default_rng(seed)
        rows = int(rng.integers(1, 51))
        cols = int(rng.integers(1, 41))
        a = rng.normal(size=(rows, cols))
        res = svd(a)
        rec = res.u @ np.diag(res.s) @ res.v.T
        assert np.linalg.norm(rec - a) <= 1e-10 * max(np.linalg.norm(a), 1e-30)
        r = min(rows, cols)
        assert np.max(np.abs(res.u.T @ res.u - np.eye(r))) <= 1e-10
        assert np.max(np.abs(res.v.T @ res.v - np.eye(r))) <= 1e-10
        assert np.all(np.diff(res.s) <= 1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_singular_values_match_gram_eigenvalues(self, seed):
        # independent oracle: symmetric eigensolver on N'N
        rng = np.random.default_rng(100 + seed)
        a = rng.normal(size=(int(rng.integers(1, 7)), int(rng.integers(1, 7))))
        res = svd(a)
        eig = np.linalg.eigvalsh(a.T @ a)[::-1]
        expect = np.sqrt(np.maximum(eig, 0.0))[: res.s.size]
        assert np.allclose(np.sort(res.s)[::-1], expect, atol=1e-8)

    def test_sign_convention(self):
        res = svd(np.array([[-2.0, 0.0], [0.0, 1.0]]))
        for j in range(2):
            k = int(np.argmax(np.abs(res.u[:, j])))
            assert res.u[k, j] > 0

    def test_wide_matrix(self):
        a = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, -1.0]])
        res = svd(a)
        assert res.u.shape == (2, 2)
        assert res.v.shape == (3, 2)
        assert np.allclose(res.u @ np.diag(res.s) @ res.v.T, a, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            svd(np.array([[np.nan, 1.0]]))


class TestOls:
    def test_exact_line(self):
        fit = ols_fit(np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0]))
        assert abs(fit.coefficients[0] - 2.0) < 1e-10
        assert abs(fit.intercept) < 1e-10

    def test_constant_target(self):
        fit = ols_fit(np.array([[1.0], [2.0], [3.0]]), np.array([5.0, 5.0, 5.0]))
        assert abs(fit.coefficients[0]) < 1e-10
        assert abs(fit.intercept - 5.0) < 1e-10

    def test_affine_recovery(self):
        x = np.arange(1.0, 7.0).reshape(-1, 1)
        y = 3.0 * x[:, 0] + 1.0
        fit = ols_fit(x, y)
        assert abs(fit.coefficients[0] - 3.0) < 1e-10
        assert abs(fit.intercept - 1.0) < 1e-10

    @pytest.mark.parametrize("seed", range(6))
    def test_residual_orthogonality(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(40, 5))
        y = rng.normal(size=40)
        fit = ols_fit(x, y)
        resid = y - fit.predict(x)
        design = np.hstack([np.ones((40, 1)), x])
        assert np.max(np.abs(design.T @ resid)) <= 1e-8 * np.linalg.norm(y)

    def test_rank_deficiency_flagged(self):
        x = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
        fit = ols_fit(x, np.arange(6.0))
        assert fit.rank_deficient
        assert np.allclose(fit.predict(x), np.arange(6.0), atol=1e-8)


class TestStandardize:
    def test_basic_column(self):
        res = standardize(np.array([[1.0], [2.0], [3.0]]))
        assert np.allclose(res.matrix.values[:, 0], [-1.224744871391589, 0.0, 1.224744871391589])
        assert abs(res.means[0] - 2.0) < 1e-15
        assert abs(res.sds[0] - 0.816496580927726) < 1e-15

    def test_idempotent(self):
        col = np.array([[-1.224744871391589], [0.0], [1.224744871391589]])
        res = standardize(col)
        assert np.allclose(res.matrix.values, col, atol=1e-12)

    def test_constant_column_dropped(self):
        m = Matrix(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]), col_labels=("c", "x"))
        res = standardize(m)
        assert res.dropped == ("c",)
        assert res.matrix.col_labels == ("x",)

    def test_moments(self):
        rng = np.random.default_rng(3)
        res = standardize(rng.normal(2.0, 5.0, size=(30, 4)))
        assert np.max(np.abs(res.matrix.values.mean(axis=0))) <= 1e-12
        assert np.max(np.abs(res.matrix.values.std(axis=0) - 1.0)) <= 1e-12


class TestQuantile:
    def test_median_odd(self):
        assert quantile([1.0, 2.0, 3.0], 0.5) == 2.0

    def test_median_even(self):
        assert quantile([1.0, 2.0, 3.0, 4.0], 0.5) == 2.5

    def test_interpolation(self):
        # 0.05 * (2 - 1) = 0.05 -> 10 + 0.05 * 10
        assert abs(quantile([10.0, 20.0], 0.05) - 10.5) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            quantile([], 0.5)

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(7)
        vals = rng.normal(size=23)
        qs = [quantile(vals, p) for p in np.linspace(0, 1, 21)]
        assert all(b >= a for a, b in zip(qs, qs[1:]))
        assert qs[0] == vals.min() and qs[-1] == vals.max()


class TestKruskalWallis:
    def test_separated_groups(self):
        h, p = kruskal_wallis([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        assert abs(h - 27.0 / 7.0) < 1e-12
        # df=1 oracle: erfc(sqrt(H/2))
        assert abs(p - 0.04953461343562674) < 1e-10

    def test_identical_groups(self):
        h, p = kruskal_wallis([[1.0, 2.0], [1.0, 2.0]])
        assert h == 0.0
        assert p == 1.0

    def test_all_values_identical(self):
        h, p = kruskal_wallis([[2.0, 2.0], [2.0, 2.0, 2.0]])
        assert (h, p) == (0.0, 1.0)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(11)
        groups = [rng.normal(size=9), rng.normal(1.0, size=7), rng.normal(size=5)]
        h1, p1 = kruskal_wallis(groups)
        h2, p2 = kruskal_wallis([np.exp(g) for g in groups])
        assert abs(h1 - h2) < 1e-12 and abs(p1 - p2) < 1e-12

    def test_needs_two_groups(self):
        with pytest.raises(ValidationError):
            kruskal_wallis([[1.0, 2.0]])


class TestChi2Sf:
    # closed forms: df=1 erfc(sqrt(x/2)); df=2 exp(-x/2);
    # df=3 erfc(sqrt(x/2)) + sqrt(2x/pi) exp(-x/2); df=4 exp(-x/2)(1+x/2)
    @pytest.mark.parametrize("x", [0.5, 1.0, 3.857142857142857, 7.0, 15.0])
    def test_against_closed_forms(self, x):
        assert abs(chi2_sf(x, 1) - math.erfc(math.sqrt(x / 2))) < 1e-10
        assert abs(chi2_sf(x, 2) - math.exp(-x / 2)) < 1e-10
        df3 = math.erfc(math.sqrt(x / 2)) + math.sqrt(2 * x / math.pi) * math.exp(-x / 2)
        assert abs(chi2_sf(x, 3) - df3) < 1e-10
        assert abs(chi2_sf(x, 4) - math.exp(-x / 2) * (1 + x / 2)) < 1e-10
        df6 = math.exp(-x / 2) * (1 + x / 2 + x * x / 8)
        assert abs(chi2_sf(x, 6) - df6) < 1e-10

    def test_odd_df_quadrature(self):
        # Simpson-rule oracle values for df = 5
        assert abs(chi2_sf(2.0, 5) - 0.8491450360846097) < 1e-9
        assert abs(chi2_sf(9.5, 5) - 0.09070739170404751) < 1e-9

    def test_edges(self):
        assert chi2_sf(0.0, 3) == 1.0
        assert chi2_sf(-1.0, 3) == 1.0


class TestFitMetrics:
    def test_r2_perfect(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2_log(y, y) == 1.0

    def test_r2_mean_predictor(self):
        obs = np.array([1.0, 2.0, 3.0])
        assert abs(r2_log(np.full(3, 2.0), obs)) < 1e-15

    def test_r2_hand_value(self):
        assert abs(r2_log([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]) - 0.5) < 1e-12

    def test_r2_zero_variance_rejected(self):
        with pytest.raises(ValidationError):
            r2_log([1.0, 2.0], [3.0, 3.0])

    def test_mae_zero(self):
        assert mae_relative([100.0, 200.0], [100.0, 200.0]) == 0.0

    def test_mae_hand_values(self):
        assert abs(mae_relative([110.0, 90.0], [100.0, 100.0]) - 0.10) < 1e-12
        assert abs(mae_relative([100.0, 200.0], [100.0, 300.0]) - 0.25) < 1e-12

    def test_mae_positive_required(self):
        with pytest.raises(ValidationError):
            mae_relative([1.0], [0.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        pred = rng.normal(size=12)
        obs = rng.normal(size=12)
        perm = rng.permutation(12)
        assert abs(r2_log(pred, obs) - r2_log(pred[perm], obs[perm])) < 1e-12
        lev_p, lev_o = np.exp(pred), np.exp(obs)
        assert abs(mae_relative(lev_p, lev_o) - mae_relative(lev_p[perm], lev_o[perm])) < 1e-12


class TestCorrelation:
    def test_pearson_exact(self):
        x = np.arange(10.0)
        assert abs(pearson(x, 2 * x + 1) - 1.0) < 1e-12
        assert abs(pearson(x, -x) + 1.0) < 1e-12

    def test_spearman_monotone(self):
        x = np.array([1.0, 4.0, 9.0, 16.0])
        assert abs(spearman(x, np.sqrt(x)) - 1.0) < 1e-12
