import numpy as np
import pytest

from lossfda.errors import InsufficientDataError, ValidationError
from lossfda.fpca import (FpcaModel, fit_fpca, reconstruct, residual_matrix,
                          score_matrix, scores)
from lossfda.synthetic import make_eigenfunctions
from lossfda.triangles import DevCurve


def _curves(Y):
    return [DevCurve(company_id=f"C{i}", accident_year=2000,
                     ilr=np.asarray(row, dtype=float), observed_through=9, premium=1.0)
            for i, row in enumerate(Y)]


class TestFit:
    def test_identical_curves_zero_eigenvalues(self):
        Y = np.tile(np.linspace(0.2, 0.01, 10), (5, 1))
        model = fit_fpca(Y, K=3)
        np.testing.assert_allclose(model.mean, Y[0])
        np.testing.assert_allclose(model.eigenvalues, np.zeros(3), atol=1e-15)

    def test_single_direction_recovery(self, rng):
        v = rng.standard_normal(10)
        v /= np.linalg.norm(v)
        a = rng.standard_normal(200) * 0.3
        mu = np.linspace(0.2, 0.01, 10)
        Y = mu + np.outer(a, v)
        model = fit_fpca(Y, K=1)
        phi = model.eigenfunctions[:, 0]
        # sign convention makes the comparison deterministic
        target = v if v[np.argmax(np.abs(v))] > 0 else -v
        np.testing.assert_allclose(phi, target, atol=1e-10)
        assert model.eigenvalues[0] == pytest.approx(np.var(a, ddof=1), rel=1e-10)

    def test_full_rank_reconstruction(self, rng):
        Y = rng.standard_normal((40, 10)) * 0.05
        model = fit_fpca(Y, K=10)
        B = (Y - model.mean) @ model.eigenfunctions
        recon = model.mean + B @ model.eigenfunctions.T
        assert np.max(np.abs(recon - Y)) < 1e-8

    def test_k_bounds(self, rng):
        Y = rng.standard_normal((5, 10))
        with pytest.raises(ValueError):
            fit_fpca(Y, K=11)
        with pytest.raises(ValueError):
            fit_fpca(Y, K=0)
        with pytest.raises(InsufficientDataError):
            fit_fpca(Y[:3], K=4)

    def test_orthonormal_columns(self, rng):
        Y = rng.standard_normal((30, 10))
        model = fit_fpca(Y, K=6)
        gram = model.eigenfunctions.T @ model.eigenfunctions
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-10)

    def test_eigenvalues_sorted_nonnegative(self, rng):
        Y = rng.standard_normal((30, 10))
        model = fit_fpca(Y, K=10)
        assert np.all(np.diff(model.eigenvalues) <= 1e-12)
        assert np.all(model.eigenvalues >= -1e-12)

    def test_scaling_covariance_property(self, rng):
        Y = rng.standard_normal((50, 10)) * 0.02 + 0.1
        c = 3.0
        m1 = fit_fpca(Y, K=4)
        m2 = fit_fpca(c * Y, K=4)
        np.testing.assert_allclose(m2.mean, c * m1.mean, rtol=1e-12)
        np.testing.assert_allclose(m2.eigenvalues, c**2 * m1.eigenvalues, rtol=1e-9)
        np.testing.assert_allclose(m2.eigenfunctions, m1.eigenfunctions, atol=1e-9)


class TestScores:
    def test_mean_curve_scores_zero(self, rng):
        Y = rng.standard_normal((20, 10))
        model = fit_fpca(Y, K=4)
        np.testing.assert_allclose(scores(model, model.mean), np.zeros(4), atol=1e-12)

    def test_unit_eigenfunction_scores(self, rng):
        Y = rng.standard_normal((20, 10))
        model = fit_fpca(Y, K=4)
        y = model.mean + model.eigenfunctions[:, 0]
        np.testing.assert_allclose(scores(model, y), [1, 0, 0, 0], atol=1e-12)

    def test_matches_matrix_multiply(self, rng):
        Y = rng.standard_normal((20, 10))
        model = fit_fpca(Y, K=5)
        y = rng.standard_normal(10)
        np.testing.assert_allclose(
            scores(model, y), model.eigenfunctions.T @ (y - model.mean))

    def test_training_scores_center(self, rng):
        Y = rng.standard_normal((50, 10)) * 0.1
        model = fit_fpca(Y, K=3)
        sm = score_matrix(model, _curves(Y))
        assert np.max(np.abs(sm.B.mean(axis=0))) < 1e-10 * max(1, np.abs(Y).max())

    def test_incomplete_curve_rejected(self, rng):
        Y = rng.standard_normal((20, 10))
        model = fit_fpca(Y, K=2)
        y = np.full(10, np.nan)
        with pytest.raises(ValidationError):
            scores(model, y)


class TestReconstruct:
    def test_zero_scores_give_mean(self, rng):
        model = fit_fpca(rng.standard_normal((20, 10)), K=3)
        np.testing.assert_array_equal(reconstruct(model, np.zeros(3)), model.mean)

    def test_roundtrip_full_rank(self, rng):
        Y = rng.standard_normal((25, 10))
        model = fit_fpca(Y, K=10)
        y = Y[7]
        np.testing.assert_allclose(reconstruct(model, scores(model, y)), y, atol=1e-8)

    def test_error_monotone_in_k(self, rng):
        Y = rng.standard_normal((40, 10)) * 0.1
        errs = []
        for K in range(1, 11):
            model = fit_fpca(Y, K=K)
            resid = residual_matrix(model, Y)
            errs.append(float(np.sum(resid**2)))
        assert all(errs[i + 1] <= errs[i] + 1e-12 for i in range(9))
        assert errs[-1] < 1e-16 * max(1.0, np.sum(Y**2))

    def test_length_mismatch(self, rng):
        model = fit_fpca(rng.standard_normal((20, 10)), K=3)
        with pytest.raises(ValueError):
            reconstruct(model, np.zeros(4))


class TestInvariants:
    def test_explained_variance_nondecreasing_reaches_one(self, rng):
        Y = rng.standard_normal((30, 10))
        model = fit_fpca(Y, K=10)
        ratio = model.explained_variance_ratio()
        assert np.all(np.diff(ratio) >= -1e-12)
        assert ratio[-1] == pytest.approx(1.0, abs=1e-10)

    def test_mean_residual_zero(self, rng):
        Y = rng.standard_normal((50, 10)) * 0.2
        model = fit_fpca(Y, K=4)
        resid = residual_matrix(model, Y)
        assert np.max(np.abs(resid.mean(axis=0))) < 1e-10

    def test_true_structure_recovery(self):
        # whiten sampled scores so their sample covariance is exactly
        # diag(eigenvalues); the eigensolver must then recover the truth
        phi = make_eigenfunctions(2)
        rng = np.random.default_rng(7)
        raw = rng.standard_normal((500, 2))
        raw -= raw.mean(axis=0)
        white = raw @ np.linalg.inv(np.linalg.cholesky(np.cov(raw, rowvar=False, ddof=1)).T)
        B = white * np.sqrt([4e-4, 1e-4])
        Y = 0.1 + B @ phi.T
        model = fit_fpca(Y, K=2)
        assert model.explained_variance_ratio()[1] > 0.9999
        np.testing.assert_allclose(model.eigenvalues, [4e-4, 1e-4], rtol=1e-9)
        for k in range(2):
            fitted = model.eigenfunctions[:, k]
            sign = np.sign(fitted @ phi[:, k])
            assert np.max(np.abs(sign * fitted - phi[:, k])) < 1e-6


class TestSerialization:
    def test_json_roundtrip_exact(self, rng):
        Y = rng.standard_normal((30, 10)) * 0.3
        model = fit_fpca(Y, K=5)
        clone = FpcaModel.from_json(model.to_json())
        np.testing.assert_array_equal(clone.mean, model.mean)
        np.testing.assert_array_equal(clone.eigenfunctions, model.eigenfunctions)
        np.testing.assert_array_equal(clone.eigenvalues, model.eigenvalues)
        assert clone.n_train == model.n_train

    def test_json_fields(self, rng):
        import json

        model = fit_fpca(rng.standard_normal((20, 10)), K=3)
        doc = json.loads(model.to_json())
        assert set(doc) == {"mean", "eigenfunctions", "eigenvalues", "K", "n_train"}
        assert len(doc["eigenfunctions"]) == 3
        assert len(doc["eigenfunctions"][0]) == 10
