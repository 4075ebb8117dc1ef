"""Mack chain-ladder benchmark on a single company triangle.

Volume-weighted development factors project the lower-right triangle, and
Mack's distribution-free estimator supplies a standard error per forecast
cell, combining process and estimation variance. Intervals default to the
normal approximation; a lognormal alternative is available since skewed
reserves are sometimes better served by it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .triangles import LossTriangle

__all__ = ["ClFit", "mack", "fit_cl", "cl_curves", "ClCurve"]


@dataclass
class ClFit:
    """Development factors, variance parameters, forecasts, and Mack errors."""

    company_id: str
    years: list[int]
    observed_lags: np.ndarray     # per row, number of observed cells
    factors: np.ndarray           # f_j, j = 0..J-2 mapping column j -> j+1
    sigma2: np.ndarray
    sigma2_extrapolated: np.ndarray
    full: np.ndarray              # observed cells plus forecasts
    mse: np.ndarray               # per-cell Mack mean squared error (0 when observed)

    @property
    def ultimates(self) -> np.ndarray:
        return self.full[:, -1]

    @property
    def ultimate_se(self) -> np.ndarray:
        return np.sqrt(self.mse[:, -1])

    def intervals(self, level: float = 0.95, kind: str = "normal") -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (lower, upper) bounds for the forecast cells."""
        se = np.sqrt(self.mse)
        if kind == "normal":
            z = norm.ppf(0.5 + level / 2.0)
            return self.full - z * se, self.full + z * se
        if kind == "lognormal":
            z = norm.ppf(0.5 + level / 2.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                cv2 = np.where(self.full > 0, (se / self.full) ** 2, 0.0)
                sig = np.sqrt(np.log1p(cv2))
                med = self.full / np.sqrt(1.0 + cv2)
            return med * np.exp(-z * sig), med * np.exp(z * sig)
        raise ValueError(f"unknown interval kind {kind!r}")


def mack(cum: np.ndarray, company_id: str = "") -> ClFit:
    """Mack chain ladder on a cumulative triangle with NaN beyond the diagonal.

    Factors are volume weighted over the rows observing both columns; the
    last estimable sigma^2 is extrapolated by Mack's minimum rule when only
    a single row supports it.
    """
    cum = np.asarray(cum, dtype=float)
    if cum.ndim != 2 or cum.shape[1] < 2:
        raise ValidationError("triangle must be 2-D with at least two columns")
    n_rows, n_cols = cum.shape
    obs = np.array([int(np.sum(~np.isnan(cum[i]))) for i in range(n_rows)])
    for i in range(n_rows):
        if obs[i] == 0 or np.isnan(cum[i, : obs[i]]).any() or not np.isnan(cum[i, obs[i]:]).all():
            raise ValidationError(f"row {i}: observed cells must form a contiguous prefix")

    J = n_cols - 1
    factors = np.full(J, np.nan)
    sigma2 = np.full(J, np.nan)
    col_sums = np.full(J, np.nan)

    for j in range(J):
        rows = np.flatnonzero(obs >= j + 2)
        if len(rows) == 0:
            continue
        den = float(cum[rows, j].sum())
        if den <= 0:
            raise ValidationError(f"column {j}: nonpositive column sum, factor undefined")
        col_sums[j] = den
        factors[j] = float(cum[rows, j + 1].sum()) / den
        if len(rows) >= 2:
            ratios = cum[rows, j + 1] / cum[rows, j]
            sigma2[j] = float(np.sum(cum[rows, j] * (ratios - factors[j]) ** 2) / (len(rows) - 1))

    if obs.min() < n_cols:
        missing = [j for j in range(obs.min() - 1, J) if np.isnan(factors[j])]
        if missing:
            raise ValidationError(f"no observed pairs to estimate factors {missing}")

    extrapolated = np.zeros(J, dtype=bool)
    for j in range(J):
        if not np.isnan(sigma2[j]):
            continue
        extrapolated[j] = True
        if j >= 2 and not np.isnan(sigma2[j - 1]) and not np.isnan(sigma2[j - 2]):
            if sigma2[j - 2] > 0:
                sigma2[j] = min(sigma2[j - 1] ** 2 / sigma2[j - 2],
                                sigma2[j - 2], sigma2[j - 1])
            else:
                sigma2[j] = min(sigma2[j - 2], sigma2[j - 1])
        elif j >= 1 and not np.isnan(sigma2[j - 1]):
            sigma2[j] = sigma2[j - 1]
        else:
            sigma2[j] = 0.0

    full = cum.copy()
    for i in range(n_rows):
        for j in range(obs[i] - 1, J):
            full[i, j + 1] = full[i, j] * factors[j]

    mse = np.zeros((n_rows, n_cols))
    for i in range(n_rows):
        j0 = obs[i] - 1
        acc = 0.0
        for j in range(j0, J):
            acc += (sigma2[j] / factors[j] ** 2) * (1.0 / full[i, j] + 1.0 / col_sums[j])
            mse[i, j + 1] = full[i, j + 1] ** 2 * acc
    return ClFit(
        company_id=company_id,
        years=list(range(n_rows)),
        observed_lags=obs,
        factors=factors,
        sigma2=sigma2,
        sigma2_extrapolated=extrapolated,
        full=full,
        mse=mse,
    )


def fit_cl(tri: LossTriangle) -> ClFit:
    """Mack chain ladder on a LossTriangle (rows = accident years)."""
    years = tri.accident_years
    n_cols = max(len(tri.cumulative[t]) for t in years)
    cum = np.full((len(years), n_cols), np.nan)
    for i, t in enumerate(years):
        vals = tri.cumulative[t]
        cum[i, : len(vals)] = vals
    fit = mack(cum, company_id=tri.company_id)
    fit.years = list(years)
    return fit


@dataclass
class ClCurve:
    """Per-accident-year chain-ladder forecast on the loss-ratio scale."""

    accident_year: int
    lags: np.ndarray          # forecast lags
    clr: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def cl_curves(fit: ClFit, premiums: dict, level: float = 0.95,
              kind: str = "normal") -> list[ClCurve]:
    """Forecast CLR curves with per-lag Mack intervals, one per open year."""
    lower_cells, upper_cells = fit.intervals(level=level, kind=kind)
    out = []
    n_cols = fit.full.shape[1]
    for i, year in enumerate(fit.years):
        if year not in premiums:
            raise ValidationError(f"missing premium for accident year {year}")
        prem = premiums[year]
        first = fit.observed_lags[i]
        lags = np.arange(first, n_cols)
        out.append(ClCurve(
            accident_year=year,
            lags=lags,
            clr=fit.full[i, first:] / prem,
            se=np.sqrt(fit.mse[i, first:]) / prem,
            lower=lower_cells[i, first:] / prem,
            upper=upper_cells[i, first:] / prem,
        ))
    return out


def cl_rows(fit: ClFit, level: float = 0.95, kind: str = "normal") -> list[list]:
    """Rows (company_id, accident_year, lag, forecast_cumulative, se, lower, upper)."""
    lower_cells, upper_cells = fit.intervals(level=level, kind=kind)
    rows = []
    n_cols = fit.full.shape[1]
    for i, year in enumerate(fit.years):
        for j in range(fit.observed_lags[i], n_cols):
            rows.append([
                fit.company_id, year, j, fit.full[i, j],
                float(np.sqrt(fit.mse[i, j])), lower_cells[i, j], upper_cells[i, j],
            ])
    return rows
