import numpy as np
import pytest

from lossfda.errors import ValidationError
from lossfda.fpca import fit_fpca
from lossfda.synthetic import (SynthSpec, generate, inject_outliers,
                               make_eigenfunctions)
from lossfda.triangles import N_LAGS, curve_matrix


def _spec(**kw):
    defaults = dict(
        n_companies=10, first_year=2000, n_years=5, calendar_year=2004,
        eigenfunctions=make_eigenfunctions(2),
        eigenvalues=np.array([4e-4, 1e-4]),
        seed=1,
    )
    defaults.update(kw)
    return SynthSpec(**defaults)


class TestGenerate:
    def test_fixed_seed_bitwise_identical(self):
        a = generate(_spec())
        b = generate(_spec())
        np.testing.assert_array_equal(
            np.array([c.ilr for c in a.truth]), np.array([c.ilr for c in b.truth]))
        for ta, tb in zip(a.triangles, b.triangles):
            assert ta.premiums == tb.premiums

    def test_zero_structure_returns_mean(self):
        spec = _spec(eigenvalues=np.array([1e-30, 1e-31]),
                     residual_scale=np.zeros(N_LAGS))
        ds = generate(spec)
        for c in ds.truth[:10]:
            np.testing.assert_allclose(c.ilr, spec.mean, atol=1e-12)

    def test_masking_respects_calendar_cutoff(self):
        ds = generate(_spec())
        T = 2004
        for tri in ds.triangles:
            for t in tri.accident_years:
                assert tri.observed_lags(t) == min(N_LAGS - 1, T - t) + 1

    def test_truth_is_complete_and_consistent_with_triangles(self):
        ds = generate(_spec())
        truth = {c.curve_id: c for c in ds.truth}
        for tri in ds.triangles:
            for t in tri.accident_years:
                c = truth[f"{tri.company_id}:{t}"]
                stored = tri.cumulative[t]
                np.testing.assert_allclose(
                    np.cumsum(c.ilr)[: len(stored)] * c.premium, stored, rtol=1e-12)

    def test_k2_structure_recovered(self):
        spec = _spec(n_companies=120, n_years=5, calendar_year=2008,
                     residual_scale=np.zeros(N_LAGS))
        ds = generate(spec)
        model = fit_fpca(curve_matrix(ds.truth), K=2)
        assert model.explained_variance_ratio()[1] > 0.999

    def test_mean_converges_with_many_curves(self):
        spec = _spec(n_companies=10_000, n_years=10, calendar_year=None,
                     residual_scale=np.full(N_LAGS, 0.004))
        ds = generate(spec)
        Y = curve_matrix(ds.truth)
        N = Y.shape[0]
        mixing_sd = np.sqrt(
            (spec.eigenfunctions**2 @ spec.eigenvalues) + spec.residual_scale**2)
        gap = np.abs(Y.mean(axis=0) - spec.mean)
        assert np.all(gap <= 3 * mixing_sd / np.sqrt(N) + 1e-12)

    def test_heavy_tail_option_runs(self):
        ds = generate(_spec(heavy_tail=True))
        Y = np.array([c.ilr for c in ds.truth])
        assert np.isfinite(Y).all()

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            generate(_spec(eigenvalues=np.array([1e-4, 4e-4])))  # not sorted
        with pytest.raises(ValidationError):
            generate(_spec(calendar_year=2000))  # precedes last AY
        bad = _spec()
        bad.eigenfunctions = np.ones((10, 2))
        with pytest.raises(ValidationError):
            generate(bad)

    def test_write_emits_standard_schemas(self, tmp_path):
        ds = generate(_spec())
        paths = ds.write(tmp_path)
        assert set(paths) == {"triangles.csv", "features.csv", "truth.csv"}
        header = open(paths["triangles.csv"]).readline().strip()
        assert header == "company_id,accident_year,lag,cumulative_paid,earned_premium"
        from lossfda.triangles import ingest_triangles

        tris = ingest_triangles(paths["triangles.csv"])
        assert len(tris) == 10


class TestEigenfunctions:
    def test_orthonormal_any_k(self):
        for K in (1, 2, 5, 8, 10):
            phi = make_eigenfunctions(K)
            np.testing.assert_allclose(phi.T @ phi, np.eye(K), atol=1e-12)

    def test_k_bounds(self):
        with pytest.raises(ValidationError):
            make_eigenfunctions(11)


class TestInjectOutliers:
    def test_injection_shifts_selected_lags(self):
        ds = generate(_spec(calendar_year=None))
        shifted, injected = inject_outliers(ds.truth, 3, lags=[5, 6], n_mads=8.0,
                                            seed=4)
        assert len(injected) == 3
        original = {c.curve_id: c for c in ds.truth}
        for c in shifted:
            if c.curve_id in injected:
                assert c.ilr[5] > original[c.curve_id].ilr[5]
                np.testing.assert_array_equal(c.ilr[:5], original[c.curve_id].ilr[:5])

    def test_injected_curves_flagged_by_depth(self):
        # alternating directions over all lags: the injected curves hold the
        # extreme pointwise ranks everywhere, so EXD must bottom-rank exactly them
        ds = generate(_spec(n_companies=30, calendar_year=None))
        shifted, injected = inject_outliers(ds.truth, 4, lags=range(10),
                                            n_mads=15.0, seed=4,
                                            direction="alternate")
        from lossfda.depth import OutlierRule, extremal_depth, flag_outliers

        report = extremal_depth(shifted)
        flagged = flag_outliers(report, OutlierRule(kind="count", k=4))
        assert flagged == set(injected)

    def test_too_many_outliers(self):
        ds = generate(_spec())
        with pytest.raises(ValidationError):
            inject_outliers(ds.truth[:3], 5, lags=[1], n_mads=3.0)
