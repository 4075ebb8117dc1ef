"""Forecast evaluation: point accuracy, interval calibration, PIT/KS.

Interval scores follow Gneiting-Raftery: width plus 2/alpha times any
exceedance. Ultimate interval scores are premium weighted (UIS); path
scores average the per-lag interval score over the forecast horizon (CIS).
PIT values use a half-mass convention at ties so discrete ensembles avoid
atoms at 0 and 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InsufficientDataError, ValidationError

DEFAULT_KS_CONSTANT = 1.358  # asymptotic 5% point; the reference analysis used 1.35


def mape_ultimate(forecasts, truths) -> float:
    """Mean absolute percentage error of ultimate values.

    Zero truths are excluded with a warning rather than silently dropped.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if forecasts.shape != truths.shape:
        raise ValidationError("forecasts and truths are not aligned")
    usable = truths != 0.0
    if not usable.any():
        raise InsufficientDataError("no nonzero truths for MAPE")
    if not usable.all():
        warnings.warn(f"excluding {int((~usable).sum())} zero-truth ultimates from MAPE")
    return float(np.mean(np.abs(forecasts[usable] - truths[usable]) / np.abs(truths[usable])))


def interval_score(L, U, Y, alpha: float):
    """IS_alpha = (U-L) + (2/alpha)(L-Y) 1{Y<L} + (2/alpha)(Y-U) 1{Y>U}."""
    L = np.asarray(L, dtype=float)
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if np.any(U < L):
        raise ValueError("upper bound below lower bound")
    out = (U - L) + (2.0 / alpha) * (L - Y) * (Y < L) + (2.0 / alpha) * (Y - U) * (Y > U)
    return out if out.ndim else float(out)


def uis_weighted(is_values, premiums) -> float:
    """Premium-weighted mean interval score: sum(IS_i P_i) / sum(P_i)."""
    is_values = np.asarray(is_values, dtype=float)
    premiums = np.asarray(premiums, dtype=float)
    if is_values.shape != premiums.shape:
        raise ValidationError("interval scores and premiums are not aligned")
    total = premiums.sum()
    if total <= 0:
        raise ValueError("total premium must be positive")
    return float(np.sum(is_values * premiums) / total)


def cis(lowers, uppers, truth_paths, alpha: float) -> float:
    """Average over companies of the per-lag mean interval score.

    Inputs are (n_companies, n_future_lags) arrays over lags s..9; the
    inner average divides by the horizon length 10 - s.
    """
    lowers = np.atleast_2d(np.asarray(lowers, dtype=float))
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    truth_paths = np.atleast_2d(np.asarray(truth_paths, dtype=float))
    scores = interval_score(lowers, uppers, truth_paths, alpha)
    return float(np.mean(np.mean(scores, axis=1)))


def coverage(L, U, truths) -> float:
    """Share of closed intervals containing the truth (boundaries covered)."""
    L = np.asarray(L, dtype=float)
    U = np.asarray(U, dtype=float)
    truths = np.asarray(truths, dtype=float)
    return float(np.mean((L <= truths) & (truths <= U)))


def functional_coverage(lowers, uppers, truth_paths) -> float:
    """Share of truth paths lying inside the band at every future lag."""
    lowers = np.atleast_2d(np.asarray(lowers, dtype=float))
    uppers = np.atleast_2d(np.asarray(uppers, dtype=float))
    truth_paths = np.atleast_2d(np.asarray(truth_paths, dtype=float))
    inside = (lowers <= truth_paths) & (truth_paths <= uppers)
    return float(np.mean(inside.all(axis=1)))


# ---------------------------------------------------------------------------
# PIT / KS calibration diagnostic
# ---------------------------------------------------------------------------


def pit_value(samples, truth: float) -> float:
    """Ensemble CDF at the truth with half mass on ties:
    (#below + 0.5 #equal + 0.5) / (B + 1)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise InsufficientDataError("empty ensemble")
    below = float(np.sum(samples < truth))
    equal = float(np.sum(samples == truth))
    return (below + 0.5 * equal + 0.5) / (samples.size + 1)


def pit_values(ensembles, truths) -> np.ndarray:
    return np.array([pit_value(e, t) for e, t in zip(ensembles, truths)])


def ks_statistic(pits) -> float:
    """Sup distance between the empirical CDF of the PIT values and U(0,1)."""
    u = np.sort(np.asarray(pits, dtype=float))
    n = len(u)
    if n == 0:
        raise InsufficientDataError("no PIT values")
    i = np.arange(1, n + 1)
    return float(max((i / n - u).max(), (u - (i - 1) / n).max()))


@dataclass
class PitKsResult:
    pits: np.ndarray
    ks: float
    critical: float
    reject: bool

    def ecdf_rows(self) -> list[list]:
        u = np.sort(self.pits)
        n = len(u)
        return [[u[i], (i + 1) / n] for i in range(n)]


def pit_ks(ensembles, truths, ks_constant: float = DEFAULT_KS_CONSTANT) -> PitKsResult:
    """PIT values of each truth in its ensemble plus the KS uniformity test.

    Rejects at the 5% level when KS > ks_constant / sqrt(n).
    """
    pits = pit_values(ensembles, truths)
    ks = ks_statistic(pits)
    critical = ks_constant / np.sqrt(len(pits))
    return PitKsResult(pits=pits, ks=ks, critical=critical, reject=ks > critical)


# ---------------------------------------------------------------------------
# Method-comparison harness (PLS pointwise / PLS EXD / Chain Ladder)
# ---------------------------------------------------------------------------


@dataclass
class ScoreRow:
    s: int
    method: str
    mape: float
    coverage: float
    uis: float
    cis: float
    func_coverage: float


@dataclass
class EvalReport:
    rows: list[ScoreRow] = field(default_factory=list)
    pits: dict = field(default_factory=dict)        # method -> np.ndarray
    ks: dict = field(default_factory=dict)          # method -> PitKsResult

    def csv_rows(self) -> list[list]:
        return [[r.s, r.method, r.mape, r.coverage, r.uis, r.cis, r.func_coverage]
                for r in self.rows]


def _company_triangle_cut(company_curves, calendar_year):
    """Cumulative matrix for one company masked at a calendar year."""
    rows = []
    years = []
    for c in sorted(company_curves, key=lambda c: c.accident_year):
        n_obs = min(c.observed_through + 1, calendar_year - c.accident_year + 1)
        if n_obs <= 0:
            continue
        clr = np.cumsum(c.ilr[: n_obs])
        row = np.full(10, np.nan)
        row[:n_obs] = clr * c.premium
        rows.append(row)
        years.append(c.accident_year)
    return np.array(rows), years


def evaluate_methods(
    curves,
    T: int,
    s_values=range(1, 10),
    eval_years=None,
    K_grid=None,
    lam_grid=None,
    B: int = 500,
    seed: int = 0,
    alpha: float = 0.05,
    n_folds: int = 5,
    lasso_penalty=None,
    interval_kind: str = "normal",
) -> EvalReport:
    """Score PLS (pointwise and EXD bands) against Mack chain ladder.

    Training uses complete curves with accident year <= T - 9. Evaluation
    targets are complete curves in ``eval_years`` (default: accident year
    T), truncated to each s; the chain ladder sees the company's triangle
    masked at the matching calendar year.
    """
    from .bootstrap import bootstrap_forecast, clr_region, make_worlds
    from .chainladder import mack
    from .completion import (DEFAULT_LAMBDA_GRID, default_k_grid, fit_pipeline,
                             truncate_curve, tune)
    from .triangles import FeatureEncoder

    eval_years = [T] if eval_years is None else list(eval_years)
    train = [c for c in curves if c.is_complete and c.accident_year <= T - 9]
    if len(train) < 2:
        raise InsufficientDataError("evaluation needs training curves with AY <= T-9")
    targets = [c for c in curves if c.is_complete and c.accident_year in eval_years]
    if not targets:
        raise InsufficientDataError("no complete evaluation curves in eval_years")
    by_company: dict[str, list] = {}
    for c in curves:
        by_company.setdefault(c.company_id, []).append(c)

    encoder = FeatureEncoder.for_curves(train)
    lam_grid = DEFAULT_LAMBDA_GRID if lam_grid is None else lam_grid
    report = EvalReport()
    pls_ens, pls_truth = [], []
    cl_pits = []

    for s in s_values:
        result = tune(train, K_grid if K_grid is not None else default_k_grid(s),
                      lam_grid, s, n_folds=n_folds, seed=seed,
                      lasso_penalty=lasso_penalty, encoder=encoder)
        trained = fit_pipeline(train, result.K, lasso_penalty=lasso_penalty,
                               encoder=encoder)
        worlds = make_worlds(trained, B=B, seed=seed)

        per = {m: {"lo": [], "hi": [], "plo": [], "phi": []} for m in ("pls", "exd", "cl")}
        pls_fc, cl_fc, truth_ult, truth_path, prem = [], [], [], [], []
        for target in targets:
            partial = truncate_curve(target, s)
            ens = bootstrap_forecast(trained, partial, result.lam, B=B, seed=seed,
                                     worlds=worlds)
            pw = clr_region(ens, alpha, kind="pointwise")
            xd = clr_region(ens, alpha, kind="exd")
            completed = trained.complete(partial, result.lam)

            cal = target.accident_year + s - 1
            tri, years = _company_triangle_cut(by_company[target.company_id], cal)
            fit = mack(tri, company_id=target.company_id)
            lo_cells, hi_cells = fit.intervals(level=1 - alpha, kind=interval_kind)
            i = years.index(target.accident_year)
            cl_clr = fit.full[i, s:] / target.premium
            cl_lo = lo_cells[i, s:] / target.premium
            cl_hi = hi_cells[i, s:] / target.premium
            cl_se_ult = float(np.sqrt(fit.mse[i, -1])) / target.premium

            truth = np.cumsum(target.ilr)[s:]
            truth_ult.append(truth[-1])
            truth_path.append(truth)
            prem.append(target.premium)
            pls_fc.append(completed.ultimate_clr)
            cl_fc.append(cl_clr[-1])
            per["pls"]["lo"].append(pw.lower); per["pls"]["hi"].append(pw.upper)
            per["exd"]["lo"].append(xd.lower); per["exd"]["hi"].append(xd.upper)
            per["cl"]["lo"].append(cl_lo); per["cl"]["hi"].append(cl_hi)

            pls_ens.append(ens.clr_paths[:, -1])
            pls_truth.append(truth[-1])
            if cl_se_ult > 0:
                cl_pits.append(float(norm.cdf((truth[-1] - cl_clr[-1]) / cl_se_ult)))
            else:
                cl_pits.append(0.5 if truth[-1] == cl_clr[-1] else float(truth[-1] > cl_clr[-1]))

        truth_ult = np.array(truth_ult)
        truth_path = np.array(truth_path)
        prem = np.array(prem)
        point = {"pls": np.array(pls_fc), "exd": np.array(pls_fc), "cl": np.array(cl_fc)}
        for method in ("pls", "exd", "cl"):
            lo = np.array(per[method]["lo"])
            hi = np.array(per[method]["hi"])
            is_ult = interval_score(lo[:, -1], hi[:, -1], truth_ult, alpha)
            report.rows.append(ScoreRow(
                s=s,
                method=method,
                mape=mape_ultimate(point[method], truth_ult),
                coverage=coverage(lo[:, -1], hi[:, -1], truth_ult),
                uis=uis_weighted(is_ult, prem),
                cis=cis(lo, hi, truth_path, alpha),
                func_coverage=functional_coverage(lo, hi, truth_path),
            ))

    report.pits["pls"] = pit_values(pls_ens, pls_truth)
    report.pits["cl"] = np.array(cl_pits)
    for method in ("pls", "cl"):
        report.ks[method] = pit_ks_from(report.pits[method])
    return report


def pit_ks_from(pits, ks_constant: float = DEFAULT_KS_CONSTANT) -> PitKsResult:
    pits = np.asarray(pits, dtype=float)
    ks = ks_statistic(pits)
    critical = ks_constant / np.sqrt(len(pits))
    return PitKsResult(pits=pits, ks=ks, critical=critical, reject=ks > critical)
