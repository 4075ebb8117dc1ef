import warnings

import numpy as np
import pytest

from lossfda.errors import ValidationError
from lossfda.regression import (CVSpec, fit_lasso, kkt_violation, lambda_max,
                                predict_prior)


def _standardized_design(rng, N, p):
    X = rng.standard_normal((N, p))
    return X


class TestNullAndOls:
    def test_large_penalty_gives_null_model(self, rng):
        X = _standardized_design(rng, 80, 6)
        y = rng.standard_normal(80)
        lam = lambda_max(X, y)
        prior = fit_lasso(y, X, lam * 1.0000001)
        fit = prior.factors[0]
        np.testing.assert_array_equal(fit.coef, np.zeros(6))
        assert fit.intercept == pytest.approx(y.mean())

    def test_just_below_lambda_max_activates(self, rng):
        X = _standardized_design(rng, 80, 6)
        y = X[:, 2] * 1.5 + rng.standard_normal(80) * 0.1
        prior = fit_lasso(y, X, lambda_max(X, y) * 0.95)
        assert np.any(prior.factors[0].coef != 0)

    def test_zero_penalty_matches_ols(self, rng):
        for _ in range(5):
            N, p = 60, 5
            X = _standardized_design(rng, N, p)
            y = rng.standard_normal(N)
            prior = fit_lasso(y, X, 0.0)
            fit = prior.factors[0]
            Xd = np.column_stack([np.ones(N), X])
            beta = np.linalg.solve(Xd.T @ Xd, Xd.T @ y)
            assert abs(fit.intercept - beta[0]) < 1e-6
            np.testing.assert_allclose(fit.coef, beta[1:], atol=1e-6)

    def test_univariate_soft_threshold_analytic(self, rng):
        N = 200
        x = rng.standard_normal(N)
        y = 2.0 * x + rng.standard_normal(N) * 0.3
        lam = 0.15
        prior = fit_lasso(y, x[:, None], lam)
        fit = prior.factors[0]
        # analytic univariate LASSO on standardized data
        xs = (x - x.mean()) / x.std()
        rho = xs @ (y - y.mean()) / N
        theta = np.sign(rho) * max(abs(rho) - lam, 0.0)
        expected = theta / x.std()
        assert abs(fit.coef[0] - expected) < 1e-8


class TestKkt:
    def test_kkt_holds_across_penalties(self, rng):
        X = _standardized_design(rng, 100, 8)
        theta_true = np.array([2.0, -1.0, 0, 0, 0.5, 0, 0, 0])
        y = X @ theta_true + rng.standard_normal(100) * 0.2
        for lam in (0.0, 0.01, 0.05, 0.2):
            prior = fit_lasso(y, X, lam)
            assert kkt_violation(prior.factors[0], X, y) < 1e-6

    def test_l1_norm_nonincreasing_in_penalty(self, rng):
        X = _standardized_design(rng, 80, 6)
        y = rng.standard_normal(80)
        norms = []
        for lam in (0.0, 0.02, 0.05, 0.1, 0.3):
            prior = fit_lasso(y, X, lam)
            fit = prior.factors[0]
            norms.append(np.abs(fit.coef * fit.x_scale).sum())
        assert all(norms[i + 1] <= norms[i] + 1e-10 for i in range(len(norms) - 1))

    def test_sparsity_grows_with_penalty(self, rng):
        X = _standardized_design(rng, 120, 10)
        y = X[:, 0] * 0.8 + X[:, 3] * 0.3 + rng.standard_normal(120) * 0.5
        active = []
        for lam in (0.001, 0.05, 0.2, 1.0):
            prior = fit_lasso(y, X, lam)
            active.append(int(np.sum(prior.factors[0].coef != 0)))
        assert active[-1] == 0
        assert active[0] >= active[-2]


class TestPredict:
    def test_zero_features_give_intercepts(self, rng):
        X = _standardized_design(rng, 50, 4)
        B = rng.standard_normal((50, 3))
        prior = fit_lasso(B, X, 0.05)
        pred = predict_prior(prior, np.zeros(4))
        np.testing.assert_allclose(pred, [f.intercept for f in prior.factors])

    def test_exact_fit_interpolates_training_row(self, rng):
        X = _standardized_design(rng, 40, 3)
        theta = np.array([1.0, -2.0, 0.5])
        y = 0.3 + X @ theta  # noise-free
        prior = fit_lasso(y, X, 0.0)
        pred = predict_prior(prior, X[11])
        assert pred[0] == pytest.approx(y[11], abs=1e-8)

    def test_one_hot_difference_equals_coefficient(self, rng):
        X = (rng.random((60, 5)) < 0.5).astype(float)
        y = rng.standard_normal(60)
        prior = fit_lasso(y, X, 0.01)
        fit = prior.factors[0]
        x1 = np.zeros(5)
        x2 = x1.copy()
        x2[3] = 1.0
        diff = prior.predict(x2)[0] - prior.predict(x1)[0]
        assert diff == pytest.approx(fit.coef[3], abs=1e-12)

    def test_affine_in_features(self, rng):
        X = _standardized_design(rng, 50, 4)
        prior = fit_lasso(rng.standard_normal(50), X, 0.02)
        x1, x2 = rng.standard_normal(4), rng.standard_normal(4)
        lhs = prior.predict(x1) + prior.predict(x2) - prior.predict(np.zeros(4))
        np.testing.assert_allclose(lhs, prior.predict(x1 + x2), atol=1e-10)

    def test_encoding_mismatch(self, rng):
        prior = fit_lasso(rng.standard_normal(20), rng.standard_normal((20, 4)), 0.1)
        with pytest.raises(ValidationError):
            prior.predict(np.zeros(5))


class TestEdgeCases:
    def test_zero_variance_column_dropped_with_warning(self, rng):
        X = _standardized_design(rng, 50, 3)
        X[:, 1] = 7.0
        with pytest.warns(UserWarning, match="zero-variance"):
            prior = fit_lasso(rng.standard_normal(50), X, 0.05)
        assert prior.factors[0].coef[1] == 0.0

    def test_nonfinite_inputs_rejected(self, rng):
        X = _standardized_design(rng, 20, 3)
        y = rng.standard_normal(20)
        y[3] = np.nan
        with pytest.raises(ValidationError):
            fit_lasso(y, X, 0.1)

    def test_per_factor_penalties(self, rng):
        X = _standardized_design(rng, 60, 4)
        B = rng.standard_normal((60, 2))
        prior = fit_lasso(B, X, [0.01, 10.0])
        assert np.any(prior.factors[0].coef != 0)
        np.testing.assert_array_equal(prior.factors[1].coef, np.zeros(4))

    def test_cv_selects_reasonable_penalty(self, rng):
        X = _standardized_design(rng, 120, 6)
        y = X[:, 0] * 1.0 + rng.standard_normal(120) * 0.3
        groups = [f"G{i % 12}" for i in range(120)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prior = fit_lasso(y, X, CVSpec(n_folds=4, seed=1), groups=groups)
        fit = prior.factors[0]
        # the informative feature must survive selection
        assert fit.coef[0] != 0.0
        assert fit.penalty < lambda_max(X, y)

    def test_company_folds_keep_groups_together(self, rng):
        from lossfda.regression import _company_folds

        groups = [f"G{i % 7}" for i in range(70)]
        folds = _company_folds(groups, 3, seed=0)
        for g in set(groups):
            ids = {folds[i] for i in range(70) if groups[i] == g}
            assert len(ids) == 1
