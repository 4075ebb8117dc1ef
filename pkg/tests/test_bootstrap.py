import numpy as np
import pytest

from lossfda.bootstrap import (bootstrap_forecast, clr_region, exd_region,
                               exd_region_paths, make_worlds, pointwise_interval,
                               pointwise_region)
from lossfda.completion import fit_pipeline, truncate_curve
from lossfda.errors import DegenerateResampleError
from lossfda.synthetic import SynthSpec, generate, make_eigenfunctions
from lossfda.triangles import N_LAGS


def _dataset(residual_scale=0.004, eigenvalues=(4e-4, 1e-4), seed=42,
             n_companies=25, effects=None):
    return generate(SynthSpec(
        n_companies=n_companies, first_year=1995, n_years=12, calendar_year=2006,
        eigenfunctions=make_eigenfunctions(2),
        eigenvalues=np.array(eigenvalues),
        residual_scale=np.full(N_LAGS, residual_scale),
        effects=effects,
        seed=seed,
    ))


@pytest.fixture(scope="module")
def trained_and_target():
    ds = _dataset()
    curves = ds.masked_curves()
    complete = [c for c in curves if c.is_complete]
    trained = fit_pipeline(complete, K=2, lasso_penalty=0.001)
    target = next(c for c in curves if c.observed_through == 4)
    return trained, target


class TestDeterminism:
    def test_bitwise_reproducible(self, trained_and_target):
        trained, target = trained_and_target
        a = bootstrap_forecast(trained, target, 0.1, B=2, seed=123)
        b = bootstrap_forecast(trained, target, 0.1, B=2, seed=123)
        np.testing.assert_array_equal(a.ilr_paths, b.ilr_paths)
        np.testing.assert_array_equal(a.clr_paths, b.clr_paths)

    def test_shared_worlds_match_inline(self, trained_and_target):
        trained, target = trained_and_target
        worlds = make_worlds(trained, B=40, seed=9)
        a = bootstrap_forecast(trained, target, 0.1, B=40, seed=9, worlds=worlds)
        b = bootstrap_forecast(trained, target, 0.1, B=40, seed=9)
        np.testing.assert_array_equal(a.ilr_paths, b.ilr_paths)

    def test_different_seed_differs(self, trained_and_target):
        trained, target = trained_and_target
        a = bootstrap_forecast(trained, target, 0.1, B=20, seed=1)
        b = bootstrap_forecast(trained, target, 0.1, B=20, seed=2)
        assert not np.array_equal(a.ilr_paths, b.ilr_paths)

    def test_worlds_settings_must_match(self, trained_and_target):
        trained, target = trained_and_target
        worlds = make_worlds(trained, B=20, seed=1)
        with pytest.raises(ValueError):
            bootstrap_forecast(trained, target, 0.1, B=20, seed=2, worlds=worlds)

    def test_path_shape(self, trained_and_target):
        trained, target = trained_and_target
        ens = bootstrap_forecast(trained, target, 0.1, B=15, seed=0)
        s = target.observed_through + 1
        assert ens.ilr_paths.shape == (15, N_LAGS - s)
        np.testing.assert_array_equal(ens.lags, np.arange(s, N_LAGS))


class TestDegenerateWorlds:
    def test_noise_free_replicates_identical(self):
        ds = _dataset(residual_scale=0.0, eigenvalues=(1e-18, 1e-19))
        curves = ds.masked_curves()
        complete = [c for c in curves if c.is_complete]
        trained = fit_pipeline(complete, K=2, lasso_penalty=0.0)
        target = next(c for c in curves if c.observed_through == 4)
        ens = bootstrap_forecast(trained, target, 0.05, B=30, seed=5)
        spread = ens.ilr_paths.max(axis=0) - ens.ilr_paths.min(axis=0)
        assert np.max(spread) < 1e-8
        region = pointwise_interval(ens, 0.2)
        np.testing.assert_allclose(region.upper - region.lower, 0.0, atol=1e-8)

    def test_degenerate_resample_error(self, trained_and_target, monkeypatch):
        trained, target = trained_and_target

        class ConstantRng:
            def integers(self, lo, hi, size=None):
                return np.zeros(size, dtype=int)

            def random(self, n):
                return np.zeros(n)

        import lossfda.bootstrap as bt

        monkeypatch.setattr(bt, "spawn_rng", lambda *a, **k: ConstantRng())
        with pytest.raises(DegenerateResampleError):
            make_worlds(trained, B=2, seed=0)

    def test_company_level_resampling(self, trained_and_target):
        trained, target = trained_and_target
        worlds = make_worlds(trained, B=10, seed=3, resample="company")
        companies = np.array(trained.companies)
        for idx in worlds.indices:
            drawn = companies[idx]
            # every drawn company contributes all of its curves (multiples allowed)
            per_company = {c: int(np.sum(companies == c)) for c in np.unique(drawn)}
            for c, n_all in per_company.items():
                assert int(np.sum(drawn == c)) % n_all == 0
        ens = bootstrap_forecast(trained, target, 0.1, B=10, seed=3,
                                 worlds=worlds, resample="company")
        assert ens.ilr_paths.shape[0] == 10

    def test_refit_basis_path_runs_deterministically(self, trained_and_target):
        trained, target = trained_and_target
        a = bootstrap_forecast(trained, target, 0.1, B=12, seed=4, refit_basis=True)
        b = bootstrap_forecast(trained, target, 0.1, B=12, seed=4, refit_basis=True)
        np.testing.assert_array_equal(a.ilr_paths, b.ilr_paths)
        assert np.isfinite(a.ilr_paths).all()


class TestPointwise:
    def test_constant_replicates(self):
        paths = np.full((20, 3), 0.7)
        region = pointwise_region(paths, 0.1, np.arange(3))
        np.testing.assert_array_equal(region.lower, np.full(3, 0.7))
        np.testing.assert_array_equal(region.upper, np.full(3, 0.7))

    def test_type7_hand_case(self):
        paths = np.array([[1.0], [2.0], [3.0], [4.0]])
        region = pointwise_region(paths, 0.5, np.arange(1))
        assert region.lower[0] == pytest.approx(1.75)
        assert region.upper[0] == pytest.approx(3.25)

    def test_needs_enough_replicates(self):
        paths = np.random.default_rng(0).standard_normal((30, 2))
        with pytest.raises(ValueError, match="replicates"):
            pointwise_region(paths, 0.05, np.arange(2))

    def test_gaussian_half_width(self, trained_and_target):
        sigma = 0.01
        ds = _dataset(residual_scale=sigma, seed=11)
        curves = ds.masked_curves()
        complete = [c for c in curves if c.is_complete]
        trained = fit_pipeline(complete, K=2, lasso_penalty=0.001)
        target = next(c for c in curves if c.observed_through == 8)
        ens = bootstrap_forecast(trained, target, 0.05, B=2000, seed=21)
        region = pointwise_interval(ens, 0.05)
        half = (region.upper[0] - region.lower[0]) / 2
        assert abs(half - 1.96 * sigma) < 0.1 * 1.96 * sigma

    def test_width_shrinks_with_residual_scale(self):
        widths = []
        for sigma in (0.01, 0.005):
            ds = _dataset(residual_scale=sigma, seed=13)
            curves = ds.masked_curves()
            complete = [c for c in curves if c.is_complete]
            trained = fit_pipeline(complete, K=2, lasso_penalty=0.001)
            target = next(c for c in curves if c.observed_through == 4)
            ens = bootstrap_forecast(trained, target, 0.1, B=400, seed=3)
            region = pointwise_interval(ens, 0.05)
            widths.append(region.upper - region.lower)
        assert np.all(widths[1] <= widths[0])


class TestExdRegion:
    def test_single_lag_matches_pointwise_on_lattice(self):
        # with B=21 and alpha=0.5 the type-7 quantile positions land exactly
        # on the order statistics the EXD cutoff keeps (ranks 6 and 16), so
        # the two regions coincide
        rng = np.random.default_rng(8)
        paths = rng.standard_normal((21, 1))
        pw = pointwise_region(paths, 0.5, np.arange(1))
        xd = exd_region_paths(paths, 0.5, np.arange(1))
        np.testing.assert_allclose(xd.lower, pw.lower)
        np.testing.assert_allclose(xd.upper, pw.upper)

    def test_single_lag_close_to_pointwise_large_b(self):
        rng = np.random.default_rng(9)
        paths = rng.standard_normal((4000, 1))
        pw = pointwise_region(paths, 0.05, np.arange(1))
        xd = exd_region_paths(paths, 0.05, np.arange(1))
        # bounds differ by at most the local order-statistic spacing
        assert abs(xd.lower[0] - pw.lower[0]) < 0.05
        assert abs(xd.upper[0] - pw.upper[0]) < 0.05

    def test_alpha_near_one_collapses_to_deepest(self):
        rng = np.random.default_rng(10)
        paths = rng.standard_normal((25, 4))
        region = exd_region_paths(paths, 0.96, np.arange(4))
        from lossfda.depth import exd_depths

        deepest = paths[np.argmax(exd_depths(paths))]
        np.testing.assert_array_equal(region.lower, deepest)
        np.testing.assert_array_equal(region.upper, deepest)

    def test_contains_pointwise_median_path(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            paths = rng.standard_normal((60, 5))
            med = np.median(paths, axis=0)
            for alpha in (0.1, 0.3, 0.5):
                region = exd_region_paths(paths, alpha, np.arange(5))
                assert np.all(region.lower <= med)
                assert np.all(med <= region.upper)

    def test_members_are_subset_and_attain_bounds(self):
        rng = np.random.default_rng(14)
        paths = rng.standard_normal((50, 4))
        region = exd_region_paths(paths, 0.1, np.arange(4))
        sub = paths[region.member_indices]
        np.testing.assert_array_equal(region.lower, sub.min(axis=0))
        np.testing.assert_array_equal(region.upper, sub.max(axis=0))
        for x in range(4):
            assert region.lower[x] in sub[:, x]
            assert region.upper[x] in sub[:, x]

    def test_region_nesting(self):
        rng = np.random.default_rng(15)
        paths = rng.standard_normal((80, 5))
        for builder in (pointwise_region, exd_region_paths):
            wide = builder(paths, 0.05, np.arange(5))
            narrow = builder(paths, 0.4, np.arange(5))
            assert np.all(wide.lower <= narrow.lower + 1e-12)
            assert np.all(wide.upper >= narrow.upper - 1e-12)

    def test_needs_ten_replicates(self):
        paths = np.random.default_rng(0).standard_normal((5, 3))
        with pytest.raises(ValueError, match="10"):
            exd_region_paths(paths, 0.1, np.arange(3))


class TestClrRegion:
    def test_single_lag_affine_map(self, trained_and_target):
        trained, _ = trained_and_target
        ds = _dataset()
        target = next(c for c in ds.masked_curves() if c.observed_through == 8)
        ens = bootstrap_forecast(trained, target, 0.1, B=200, seed=6)
        c_obs = float(np.sum(target.ilr[:9]))
        ilr_region = pointwise_interval(ens, 0.1)
        clr = clr_region(ens, 0.1, kind="pointwise")
        assert clr.lower[0] == pytest.approx(c_obs + ilr_region.lower[0], rel=1e-12)
        assert clr.upper[0] == pytest.approx(c_obs + ilr_region.upper[0], rel=1e-12)

    def test_positive_ilr_gives_monotone_lower_bound(self):
        rng = np.random.default_rng(16)
        ilr = rng.uniform(0.01, 0.1, size=(50, 5))
        clr = np.cumsum(ilr, axis=1)
        region = pointwise_region(clr, 0.1, np.arange(5))
        assert np.all(np.diff(region.lower) >= 0)

    def test_paths_vs_bounds_cumulated_mostly_narrower(self):
        # dominant behavior: quantiles of the path sum are narrower than
        # summed per-lag quantile widths; rare interpolation counterexamples
        # exist, so this is a frequency statement, not an identity
        rng = np.random.default_rng(17)
        narrower = 0
        trials = 400
        for _ in range(trials):
            ilr = rng.standard_normal((30, 4)) * 0.02
            clr = np.cumsum(ilr, axis=1)
            alpha = 0.1
            lo_p = np.quantile(clr[:, -1], alpha / 2)
            hi_p = np.quantile(clr[:, -1], 1 - alpha / 2)
            lo_b = np.quantile(ilr, alpha / 2, axis=0).sum()
            hi_b = np.quantile(ilr, 1 - alpha / 2, axis=0).sum()
            if hi_p - lo_p <= hi_b - lo_b + 1e-15:
                narrower += 1
        assert narrower >= 0.95 * trials

    def test_width_subadditivity_counterexample_documented(self):
        # quantile width is not subadditive: this 5-path ensemble is wider on
        # the cumulated scale (6.0) than summed per-lag widths (5.0)
        ilr = np.array([
            [-1.0, 3.0], [-2.0, -2.0], [1.0, 1.0], [-3.0, -3.0], [-1.0, 2.0],
        ])
        clr = np.cumsum(ilr, axis=1)
        width_path = (np.quantile(clr[:, -1], 0.75) - np.quantile(clr[:, -1], 0.25))
        width_bounds = (np.quantile(ilr, 0.75, axis=0) - np.quantile(ilr, 0.25, axis=0)).sum()
        assert width_path > width_bounds

    def test_exd_kind_uses_cumulative_paths(self, trained_and_target):
        trained, target = trained_and_target
        ens = bootstrap_forecast(trained, target, 0.1, B=60, seed=8)
        region = clr_region(ens, 0.2, kind="exd")
        sub = ens.clr_paths[region.member_indices]
        np.testing.assert_array_equal(region.lower, sub.min(axis=0))
        np.testing.assert_array_equal(region.upper, sub.max(axis=0))
