"""Synthetic triangle datasets with known ground truth.

Curves are drawn from the hierarchical law the forecasting model assumes:
scores are linear in encoded company features plus Gaussian (optionally
heavy-tailed) mixing noise, and a residual curve is added on top. The
generator emits masked triangles in the standard CSV schema alongside the
full truth, so calibration studies can compare forecasts against values
the model never saw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .seeding import spawn_rng
from .tableio import write_csv
from .triangles import (BUSINESS_FOCUS_LEVELS, FEATURES_HEADER, GEOGRAPHY_LEVELS,
                        N_LAGS, OWNERSHIP_LEVELS, TRIANGLE_HEADER, CompanyFeatures,
                        DevCurve, FeatureEncoder, LossTriangle)

# Smooth early-concentrated loading shapes; orthonormalized before use.
_BASE_LOADINGS = np.array([
    [0.53, 0.72, 0.37, 0.21, 0.10, 0.07, 0.04, 0.03, 0.02, 0.02],
    [0.79, -0.20, -0.40, -0.34, -0.20, -0.13, -0.07, -0.05, -0.04, -0.02],
    [-0.34, 0.64, -0.38, -0.43, -0.29, -0.19, -0.13, -0.09, -0.06, -0.03],
    [0.02, 0.16, -0.73, 0.43, 0.39, 0.20, 0.17, 0.12, 0.10, 0.05],
    [0.00, -0.01, -0.16, 0.72, -0.64, -0.13, -0.12, -0.07, -0.06, -0.07],
])

DEFAULT_MEAN = np.array([0.167, 0.190, 0.100, 0.058, 0.034, 0.022,
                         0.0145, 0.011, 0.008, 0.006])


def make_eigenfunctions(K: int, seed: int = 0) -> np.ndarray:
    """Orthonormal 10 x K loading matrix with realistic smooth leading shapes."""
    if not 1 <= K <= N_LAGS:
        raise ValidationError(f"K must lie in 1..{N_LAGS}")
    cols = [row for row in _BASE_LOADINGS[:K]]
    if K > len(_BASE_LOADINGS):
        rng = spawn_rng(seed, "extra-loadings")
        cols.extend(rng.standard_normal((K - len(_BASE_LOADINGS), N_LAGS)))
    q, _ = np.linalg.qr(np.array(cols).T)
    phi = q[:, :K]
    for k in range(K):
        j = int(np.argmax(np.abs(phi[:, k])))
        if phi[j, k] < 0:
            phi[:, k] = -phi[:, k]
    return phi


@dataclass
class SynthSpec:
    """Generator settings; the defaults give a plausible mid-sized market."""

    n_companies: int = 50
    first_year: int = 1995
    n_years: int = 12
    calendar_year: int | None = None   # masking cutoff T; None emits complete rows
    mean: np.ndarray = field(default_factory=lambda: DEFAULT_MEAN.copy())
    eigenfunctions: np.ndarray = field(default_factory=lambda: make_eigenfunctions(2))
    eigenvalues: np.ndarray = field(default_factory=lambda: np.array([4e-4, 1e-4]))
    effects: np.ndarray | None = None  # (K, 12): intercept + encoded features
    residual_scale: np.ndarray = field(default_factory=lambda: np.full(N_LAGS, 0.004))
    premium_range: tuple = (2e6, 5e8)
    heavy_tail: bool = False
    seed: int = 0

    @property
    def K(self) -> int:
        return self.eigenfunctions.shape[1]

    @property
    def last_year(self) -> int:
        return self.first_year + self.n_years - 1

    def validate(self) -> None:
        if self.K > N_LAGS:
            raise ValidationError("more true factors than lags")
        gram = self.eigenfunctions.T @ self.eigenfunctions
        if not np.allclose(gram, np.eye(self.K), atol=1e-8):
            raise ValidationError("true eigenfunctions must be orthonormal")
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.shape != (self.K,) or np.any(ev <= 0) or np.any(np.diff(ev) > 0):
            raise ValidationError("eigenvalues must be positive and sorted descending")
        if self.effects is not None and self.effects.shape != (self.K, 12):
            raise ValidationError("effects must be (K, 12): intercept + 11 features")
        if np.asarray(self.residual_scale).shape != (N_LAGS,):
            raise ValidationError("residual_scale must give one sd per lag")
        if self.calendar_year is not None and self.calendar_year < self.last_year:
            raise ValidationError("calendar_year must not precede the last accident year")


@dataclass
class SynthDataset:
    spec: SynthSpec
    triangles: list[LossTriangle]
    features: dict[str, CompanyFeatures]
    truth: list[DevCurve]
    true_scores: np.ndarray
    encoder: FeatureEncoder

    def masked_curves(self) -> list[DevCurve]:
        """Curves as a consumer of the masked triangles would see them."""
        from .triangles import to_ilr

        out = []
        for tri in self.triangles:
            out.extend(to_ilr(tri, features=self.features[tri.company_id]))
        return out

    def write(self, outdir) -> dict[str, str]:
        """Emit triangles.csv, features.csv, truth.csv; returns name->path."""
        from pathlib import Path

        outdir = Path(outdir)
        paths = {}
        rows = []
        for tri in self.triangles:
            for t in tri.accident_years:
                for x, v in enumerate(tri.cumulative[t]):
                    rows.append([tri.company_id, t, x, v, tri.premiums[t]])
        paths["triangles.csv"] = write_csv(outdir / "triangles.csv", TRIANGLE_HEADER, rows)
        paths["features.csv"] = write_csv(
            outdir / "features.csv", FEATURES_HEADER,
            [[cid, f.business_focus, f.ownership, f.geography]
             for cid, f in sorted(self.features.items())],
        )
        truth_rows = []
        for c in self.truth:
            clr = np.cumsum(c.ilr)
            for x in range(N_LAGS):
                truth_rows.append([c.company_id, c.accident_year, x,
                                   clr[x] * c.premium, c.premium])
        paths["truth.csv"] = write_csv(outdir / "truth.csv", TRIANGLE_HEADER, truth_rows)
        return {k: str(v) for k, v in paths.items()}


def _noise(rng, size, heavy_tail):
    if heavy_tail:
        # Student t with 4 df rescaled to unit variance
        return rng.standard_t(4, size=size) / np.sqrt(2.0)
    return rng.standard_normal(size)


def generate(spec: SynthSpec) -> SynthDataset:
    """Draw a full dataset from the spec; bitwise reproducible per seed."""
    spec.validate()
    encoder = FeatureEncoder(base_year=spec.first_year)
    effects = spec.effects
    if effects is None:
        effects = np.zeros((spec.K, 12))
    sd_scores = np.sqrt(np.asarray(spec.eigenvalues, dtype=float))
    lo, hi = spec.premium_range

    triangles = []
    features = {}
    truth = []
    score_rows = []
    T = spec.calendar_year

    for i in range(spec.n_companies):
        rng = spawn_rng(spec.seed, "company", i)
        cid = f"S{i:04d}"
        feats = CompanyFeatures(
            business_focus=BUSINESS_FOCUS_LEVELS[rng.integers(len(BUSINESS_FOCUS_LEVELS))],
            ownership=OWNERSHIP_LEVELS[rng.integers(len(OWNERSHIP_LEVELS))],
            geography=GEOGRAPHY_LEVELS[rng.integers(len(GEOGRAPHY_LEVELS))],
        )
        features[cid] = feats
        base_prem = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))

        premiums = {}
        cumulative = {}
        for t in range(spec.first_year, spec.last_year + 1):
            prem = base_prem * (1.0 + rng.uniform(-0.05, 0.05))
            x = encoder.encode_parts(feats, t, prem)
            beta = effects[:, 0] + effects[:, 1:] @ x + sd_scores * _noise(
                rng, spec.K, spec.heavy_tail)
            eps = np.asarray(spec.residual_scale) * _noise(rng, N_LAGS, spec.heavy_tail)
            ilr = spec.mean + spec.eigenfunctions @ beta + eps

            truth.append(DevCurve(
                company_id=cid, accident_year=t, ilr=ilr,
                observed_through=N_LAGS - 1, premium=prem, features=feats,
            ))
            score_rows.append(beta)

            n_obs = N_LAGS if T is None else min(N_LAGS - 1, T - t) + 1
            premiums[t] = prem
            cumulative[t] = np.cumsum(ilr)[:n_obs] * prem
        triangles.append(LossTriangle(
            company_id=cid,
            accident_years=sorted(premiums),
            premiums=premiums,
            cumulative=cumulative,
        ))

    return SynthDataset(
        spec=spec, triangles=triangles, features=features, truth=truth,
        true_scores=np.array(score_rows), encoder=encoder,
    )


def inject_outliers(curves: list[DevCurve], n_outliers: int, lags, n_mads: float,
                    seed: int = 0, direction: str = "up") -> tuple[list[DevCurve], list[str]]:
    """Shift ``n_outliers`` random curves by ``n_mads`` scaled MADs at ``lags``.

    ``direction`` is "up", "down", or "alternate" (sign flips across the
    injected curves, which keeps them from competing for the same extreme
    ranks). Returns the modified copies plus the ids of the injected curves.
    """
    from .triangles import MAD_SCALE

    if direction not in ("up", "down", "alternate"):
        raise ValueError(f"unknown direction {direction!r}")
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    if n_outliers > len(curves):
        raise ValidationError("cannot inject more outliers than curves")
    Y = np.array([c.ilr for c in curves])
    med = np.median(Y, axis=0)
    mad = MAD_SCALE * np.median(np.abs(Y - med), axis=0)
    rng = spawn_rng(seed, "outlier-injection")
    chosen = list(rng.choice(len(curves), size=n_outliers, replace=False))
    sign = {}
    for rank, i in enumerate(chosen):
        if direction == "up":
            sign[i] = 1.0
        elif direction == "down":
            sign[i] = -1.0
        else:
            sign[i] = 1.0 if rank % 2 == 0 else -1.0
    out = []
    injected = []
    for i, c in enumerate(curves):
        if i in sign:
            ilr = c.ilr.copy()
            ilr[lags] = ilr[lags] + sign[i] * n_mads * mad[lags]
            out.append(DevCurve(company_id=c.company_id, accident_year=c.accident_year,
                                ilr=ilr, observed_through=c.observed_through,
                                premium=c.premium, features=c.features))
            injected.append(c.curve_id)
        else:
            out.append(c)
    return out, injected
