"""Loss-triangle ingestion and loss-ratio curve construction.

A triangle stores cumulative paid losses per accident year over development
lags 0..9, observed up to the calendar diagonal, together with net earned
premiums. Curves are the triangle rows normalized by premium: incremental
loss ratios (ILR) and their running sums, cumulative loss ratios (CLR).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError

logger = logging.getLogger(__name__)

N_LAGS = 10
MAD_SCALE = 1.4826  # normal-consistency constant
ZERO_ILR_TOL = 1e-12

TRIANGLE_HEADER = ["company_id", "accident_year", "lag", "cumulative_paid", "earned_premium"]
FEATURES_HEADER = ["company_id", "business_focus", "ownership", "geography"]

# Reference level listed first in each tuple; it is absorbed by the intercept
# when one-hot encoding.
BUSINESS_FOCUS_LEVELS = ("Commercial", "Personal", "WkComp")
OWNERSHIP_LEVELS = ("Mutual", "Stock", "Other")
GEOGRAPHY_LEVELS = ("National", "Midwest", "Northeast", "South", "West")


@dataclass(frozen=True)
class CompanyFeatures:
    """Time-invariant company characteristics."""

    business_focus: str
    ownership: str
    geography: str

    def __post_init__(self):
        if self.business_focus not in BUSINESS_FOCUS_LEVELS:
            raise ValidationError(f"unknown business_focus {self.business_focus!r}")
        if self.ownership not in OWNERSHIP_LEVELS:
            raise ValidationError(f"unknown ownership {self.ownership!r}")
        if self.geography not in GEOGRAPHY_LEVELS:
            raise ValidationError(f"unknown geography {self.geography!r}")


@dataclass
class LossTriangle:
    """Cumulative paid losses of one company indexed by accident year and lag.

    ``cumulative[year]`` holds the observed prefix (lags ``0..len-1``); the
    prefix length equals ``min(10, T - year + 1)`` where ``T`` is the
    company's latest calendar year.
    """

    company_id: str
    accident_years: list[int]
    premiums: dict[int, float]
    cumulative: dict[int, np.ndarray]

    def observed_lags(self, year: int) -> int:
        """Number of observed lags for ``year`` (last lag index + 1)."""
        return len(self.cumulative[year])

    @property
    def latest_calendar_year(self) -> int:
        return max(t + len(self.cumulative[t]) - 1 for t in self.accident_years)

    def validate(self) -> None:
        """Raise ValidationError on any structural defect."""
        if not self.accident_years:
            raise ValidationError(f"{self.company_id}: no accident years")
        if sorted(self.accident_years) != self.accident_years:
            raise ValidationError(f"{self.company_id}: accident years not sorted")
        for t in self.accident_years:
            if t not in self.premiums or t not in self.cumulative:
                raise ValidationError(f"{self.company_id}/{t}: missing premium or losses")
            if not self.premiums[t] > 0:
                raise ValidationError(
                    f"{self.company_id}/{t}: premium must be strictly positive"
                )
            n = len(self.cumulative[t])
            if not 1 <= n <= N_LAGS:
                raise ValidationError(f"{self.company_id}/{t}: {n} lags outside 1..{N_LAGS}")
        T = self.latest_calendar_year
        for t in self.accident_years:
            expect = min(N_LAGS - 1, T - t) + 1
            if len(self.cumulative[t]) != expect:
                raise ValidationError(
                    f"{self.company_id}/{t}: observed {len(self.cumulative[t])} lags, "
                    f"expected {expect} for calendar year {T}"
                )


@dataclass
class DevCurve:
    """One (company, accident year) development curve on the loss-ratio scale.

    ``ilr`` has length 10 with NaN beyond ``observed_through``.
    """

    company_id: str
    accident_year: int
    ilr: np.ndarray
    observed_through: int
    premium: float
    features: CompanyFeatures | None = None

    @property
    def curve_id(self) -> str:
        return f"{self.company_id}:{self.accident_year}"

    @property
    def is_complete(self) -> bool:
        return self.observed_through == N_LAGS - 1

    def observed_ilr(self) -> np.ndarray:
        return self.ilr[: self.observed_through + 1]


@dataclass(frozen=True)
class SelectionFilters:
    """Sample-selection thresholds applied at the company level.

    A company is dropped when any accident year's premium falls below
    ``min_premium``, or when max/min annual premium strictly exceeds
    ``max_premium_ratio``.
    """

    min_premium: float | None = None
    max_premium_ratio: float | None = None


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line=line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", line=line)
    return value


def _parse_int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line=line) from None


def ingest_triangles(csv_source, filters: SelectionFilters | None = None) -> list[LossTriangle]:
    """Read the triangle CSV and return validated, filtered triangles.

    ``csv_source`` is a path or an open text stream with header
    ``company_id,accident_year,lag,cumulative_paid,earned_premium``.
    Duplicate (company, year, lag) rows and inconsistent premiums raise
    ValidationError; rows with an empty premium invalidate only that
    accident year. Companies failing a filter are dropped with a logged
    reason.
    """
    filters = filters or SelectionFilters()
    if hasattr(csv_source, "read"):
        rows = _read_triangle_rows(csv_source)
    else:
        with open(csv_source, newline="", encoding="utf-8") as fh:
            rows = _read_triangle_rows(fh)

    companies: dict[str, dict[int, dict]] = {}
    for line, cid, year, lag, paid, prem in rows:
        yr = companies.setdefault(cid, {}).setdefault(
            year, {"cells": {}, "premium": None, "premium_missing": False}
        )
        if lag in yr["cells"]:
            raise ValidationError(
                f"line {line}: duplicate cell ({cid}, {year}, lag {lag})"
            )
        yr["cells"][lag] = paid
        if prem is None:
            yr["premium_missing"] = True
        else:
            if prem <= 0:
                raise ValidationError(
                    f"line {line}: premium must be strictly positive for {cid}/{year}"
                )
            if yr["premium"] is not None and yr["premium"] != prem:
                raise ValidationError(
                    f"line {line}: inconsistent premium for {cid}/{year}"
                )
            yr["premium"] = prem

    triangles = []
    for cid in sorted(companies):
        years = {}
        for year, rec in sorted(companies[cid].items()):
            if rec["premium"] is None:
                logger.info("dropping %s/%s: missing premium", cid, year)
                continue
            lags = sorted(rec["cells"])
            if lags != list(range(len(lags))):
                raise ValidationError(
                    f"{cid}/{year}: non-contiguous lag prefix {lags}"
                )
            years[year] = (rec["premium"], np.array([rec["cells"][x] for x in lags]))
        if not years:
            logger.info("dropping %s: no usable accident years", cid)
            continue
        tri = LossTriangle(
            company_id=cid,
            accident_years=sorted(years),
            premiums={t: years[t][0] for t in years},
            cumulative={t: years[t][1] for t in years},
        )
        tri.validate()
        if _passes_filters(tri, filters):
            triangles.append(tri)
    return triangles


def _read_triangle_rows(fh):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty triangle CSV", line=1) from None
    if [h.strip() for h in header] != TRIANGLE_HEADER:
        raise ParseError(
            f"expected header {','.join(TRIANGLE_HEADER)}, got {','.join(header)}", line=1
        )
    rows = []
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(TRIANGLE_HEADER):
            raise ParseError(f"expected {len(TRIANGLE_HEADER)} fields, got {len(row)}", line=line)
        cid = row[0].strip()
        if not cid:
            raise ParseError("empty company_id", line=line)
        year = _parse_int(row[1].strip(), "accident_year", line)
        lag = _parse_int(row[2].strip(), "lag", line)
        if not 0 <= lag <= N_LAGS - 1:
            raise ValidationError(f"line {line}: lag {lag} outside 0..{N_LAGS - 1}")
        paid = _parse_float(row[3].strip(), "cumulative_paid", line)
        prem_text = row[4].strip()
        prem = None if prem_text == "" else _parse_float(prem_text, "earned_premium", line)
        rows.append((line, cid, year, lag, paid, prem))
    return rows


def _passes_filters(tri: LossTriangle, filters: SelectionFilters) -> bool:
    prems = np.array([tri.premiums[t] for t in tri.accident_years])
    if filters.min_premium is not None and prems.min() < filters.min_premium:
        logger.info(
            "dropping %s: premium %.6g below minimum %.6g",
            tri.company_id, prems.min(), filters.min_premium,
        )
        return False
    if filters.max_premium_ratio is not None:
        ratio = prems.max() / prems.min()
        # strict inequality: a ratio exactly at the bound is kept
        if ratio > filters.max_premium_ratio:
            logger.info(
                "dropping %s: premium ratio %.6g exceeds %.6g",
                tri.company_id, ratio, filters.max_premium_ratio,
            )
            return False
    return True


def read_features(csv_source) -> dict[str, CompanyFeatures]:
    """Read the features CSV (``company_id,business_focus,ownership,geography``)."""
    if hasattr(csv_source, "read"):
        return _read_features(csv_source)
    with open(csv_source, newline="", encoding="utf-8") as fh:
        return _read_features(fh)


def _read_features(fh):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty features CSV", line=1) from None
    if [h.strip() for h in header] != FEATURES_HEADER:
        raise ParseError(
            f"expected header {','.join(FEATURES_HEADER)}, got {','.join(header)}", line=1
        )
    out = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(FEATURES_HEADER):
            raise ParseError(f"expected {len(FEATURES_HEADER)} fields, got {len(row)}", line=line)
        cid = row[0].strip()
        if cid in out:
            raise ValidationError(f"line {line}: duplicate features for {cid}")
        try:
            out[cid] = CompanyFeatures(row[1].strip(), row[2].strip(), row[3].strip())
        except ValidationError as exc:
            raise ValidationError(f"line {line}: {exc}") from None
    return out


def to_ilr(tri: LossTriangle, features: CompanyFeatures | None = None) -> list[DevCurve]:
    """Convert a triangle into one incremental-loss-ratio curve per accident year.

    y(0) = C(0)/P and y(x) = (C(x) - C(x-1))/P; negative increments are
    preserved.
    """
    curves = []
    for t in tri.accident_years:
        cum = tri.cumulative[t]
        prem = tri.premiums[t]
        ilr = np.full(N_LAGS, np.nan)
        ilr[: len(cum)] = np.diff(cum, prepend=0.0) / prem
        curves.append(
            DevCurve(
                company_id=tri.company_id,
                accident_year=t,
                ilr=ilr,
                observed_through=len(cum) - 1,
                premium=prem,
                features=features,
            )
        )
    return curves


def to_clr(curve: DevCurve) -> np.ndarray:
    """Cumulative loss ratios over the observed prefix: c(x) = sum_{j<=x} y(j)."""
    return np.cumsum(curve.observed_ilr())


def ilr_from_clr(clr: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_clr`; exact round-trip in both directions."""
    return np.diff(np.asarray(clr, dtype=float), prepend=0.0)


def curve_matrix(curves: list[DevCurve]) -> np.ndarray:
    """Stack complete curves into an (M, 10) ILR matrix."""
    bad = [c.curve_id for c in curves if not c.is_complete]
    if bad:
        raise ValidationError(f"curves not fully developed: {bad[:5]}")
    return np.array([c.ilr for c in curves])


# ---------------------------------------------------------------------------
# Summary statistics (per development lag)
# ---------------------------------------------------------------------------


@dataclass
class SummaryTable:
    """Per-lag summary statistics of ILR values.

    ``mad`` is scaled by the normal-consistency constant 1.4826 and
    ``mad_raw`` is the unscaled median absolute deviation; skewness and
    kurtosis are bias-uncorrected moment estimators with kurtosis on the
    non-excess convention.
    """

    n: np.ndarray
    mean: np.ndarray
    std_dev: np.ndarray
    median: np.ndarray
    mad: np.ndarray
    mad_raw: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    q95: np.ndarray
    q99: np.ndarray
    skewness: np.ndarray
    kurtosis: np.ndarray
    winsorized_mean: np.ndarray
    winsorized_sd: np.ndarray
    n_positive: np.ndarray
    n_zero: np.ndarray
    n_negative: np.ndarray

    COLUMNS = [
        "lag", "n", "mean", "std_dev", "median", "mad", "mad_raw", "min", "max",
        "q95", "q99", "skewness", "kurtosis", "winsorized_mean_5pct",
        "winsorized_sd_5pct", "n_positive", "n_zero", "n_negative",
    ]

    def rows(self) -> list[list]:
        out = []
        for x in range(N_LAGS):
            out.append([
                x, int(self.n[x]), self.mean[x], self.std_dev[x], self.median[x],
                self.mad[x], self.mad_raw[x], self.minimum[x], self.maximum[x],
                self.q95[x], self.q99[x], self.skewness[x], self.kurtosis[x],
                self.winsorized_mean[x], self.winsorized_sd[x],
                int(self.n_positive[x]), int(self.n_zero[x]), int(self.n_negative[x]),
            ])
        return out


def winsorize(values: np.ndarray, lower_q: float = 0.05, upper_q: float = 0.95) -> np.ndarray:
    """Clamp values beyond the given sample quantiles to those quantiles."""
    lo = np.quantile(values, lower_q)
    hi = np.quantile(values, upper_q)
    return np.clip(values, lo, hi)


def _moments(values: np.ndarray) -> tuple[float, float]:
    centered = values - values.mean()
    m2 = np.mean(centered**2)
    if m2 == 0:
        return 0.0, 0.0
    skew = np.mean(centered**3) / m2**1.5
    kurt = np.mean(centered**4) / m2**2
    return skew, kurt


def summarize(curves: list[DevCurve]) -> SummaryTable:
    """Per-lag summary of all ILR values observed at each lag."""
    if len(curves) < 2:
        raise InsufficientDataError("summarize needs at least 2 curves")
    cols = {name: np.full(N_LAGS, np.nan) for name in (
        "mean", "std_dev", "median", "mad", "mad_raw", "minimum", "maximum",
        "q95", "q99", "skewness", "kurtosis", "winsorized_mean", "winsorized_sd",
    )}
    n = np.zeros(N_LAGS, dtype=int)
    n_pos = np.zeros(N_LAGS, dtype=int)
    n_zero = np.zeros(N_LAGS, dtype=int)
    n_neg = np.zeros(N_LAGS, dtype=int)
    for x in range(N_LAGS):
        vals = np.array([c.ilr[x] for c in curves if c.observed_through >= x])
        n[x] = len(vals)
        if len(vals) == 0:
            continue
        cols["mean"][x] = vals.mean()
        cols["median"][x] = np.median(vals)
        raw = np.median(np.abs(vals - cols["median"][x]))
        cols["mad_raw"][x] = raw
        cols["mad"][x] = MAD_SCALE * raw
        cols["minimum"][x] = vals.min()
        cols["maximum"][x] = vals.max()
        cols["q95"][x] = np.quantile(vals, 0.95)
        cols["q99"][x] = np.quantile(vals, 0.99)
        cols["skewness"][x], cols["kurtosis"][x] = _moments(vals)
        wins = winsorize(vals)
        cols["winsorized_mean"][x] = wins.mean()
        if len(vals) >= 2:
            cols["std_dev"][x] = vals.std(ddof=1)
            cols["winsorized_sd"][x] = wins.std(ddof=1)
        n_zero[x] = int(np.sum(np.abs(vals) < ZERO_ILR_TOL))
        n_pos[x] = int(np.sum(vals >= ZERO_ILR_TOL))
        n_neg[x] = int(np.sum(vals <= -ZERO_ILR_TOL))
    return SummaryTable(
        n=n, mean=cols["mean"], std_dev=cols["std_dev"], median=cols["median"],
        mad=cols["mad"], mad_raw=cols["mad_raw"], minimum=cols["minimum"],
        maximum=cols["maximum"], q95=cols["q95"], q99=cols["q99"],
        skewness=cols["skewness"], kurtosis=cols["kurtosis"],
        winsorized_mean=cols["winsorized_mean"], winsorized_sd=cols["winsorized_sd"],
        n_positive=n_pos, n_zero=n_zero, n_negative=n_neg,
    )


# ---------------------------------------------------------------------------
# Feature encoding
# ---------------------------------------------------------------------------


@dataclass
class FeatureEncoder:
    """One-hot + time-covariate encoding of curve features.

    Reference levels (absorbed by the intercept): Commercial business focus,
    Mutual ownership, National geography. The time index is
    ``accident_year - base_year + 1`` and the premium covariates are
    ``log(premium)`` and its interaction with the time index, so the vector
    length is fixed at 11 for any dataset.
    """

    base_year: int

    names = [
        "personal", "wkcomp", "stock", "other",
        "midwest", "northeast", "south", "west",
        "time", "log_prem", "log_prem_time",
    ]

    @classmethod
    def for_curves(cls, curves: list[DevCurve]) -> "FeatureEncoder":
        return cls(base_year=min(c.accident_year for c in curves))

    def encode(self, curve: DevCurve) -> np.ndarray:
        if curve.features is None:
            raise ValidationError(f"curve {curve.curve_id} carries no features")
        return self.encode_parts(curve.features, curve.accident_year, curve.premium)

    def encode_parts(self, f: CompanyFeatures, accident_year: int, premium: float) -> np.ndarray:
        t = accident_year - self.base_year + 1
        logp = math.log(premium)
        x = np.zeros(len(self.names))
        x[0] = 1.0 if f.business_focus == "Personal" else 0.0
        x[1] = 1.0 if f.business_focus == "WkComp" else 0.0
        x[2] = 1.0 if f.ownership == "Stock" else 0.0
        x[3] = 1.0 if f.ownership == "Other" else 0.0
        x[4] = 1.0 if f.geography == "Midwest" else 0.0
        x[5] = 1.0 if f.geography == "Northeast" else 0.0
        x[6] = 1.0 if f.geography == "South" else 0.0
        x[7] = 1.0 if f.geography == "West" else 0.0
        x[8] = float(t)
        x[9] = logp
        x[10] = logp * t
        return x

    def matrix(self, curves: list[DevCurve]) -> np.ndarray:
        return np.array([self.encode(c) for c in curves])
