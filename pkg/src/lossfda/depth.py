"""Functional depth: center-outward ranking of development curves.

Three notions are provided. Band depth (BD) and its modified variant work
off the extreme marginal ranks of a curve; extremal depth (EXD) orders
curves by the left tail of their pointwise-depth distribution, which makes
it sensitive to even a single extreme lag. All three consume only the
marginal rank matrix, so they are invariant under common monotone
transformations of the values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._kernels import exd_dominance_counts
from .errors import InsufficientDataError, ValidationError
from .triangles import DevCurve, curve_matrix

__all__ = [
    "DepthReport", "Envelope", "OutlierRule", "StratumResult",
    "marginal_ranks", "pointwise_depths", "depth_cdf",
    "bd_depths", "mbd_depths", "exd_depths",
    "band_depth", "modified_band_depth", "extremal_depth",
    "flag_outliers", "central_envelope", "stratified_envelopes",
]


def _as_matrix(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValidationError("expected a 2-D (curves x lags) array")
    if values.shape[0] < 2:
        raise InsufficientDataError("depth needs at least 2 curves")
    if np.isnan(values).any():
        raise ValidationError("depth requires complete curves (no NaN)")
    return values


def marginal_ranks(values) -> np.ndarray:
    """Rank matrix R with R[i, x] = 1 + #{m : values[m, x] < values[i, x]}.

    Ranks live in 1..M; ties share the lower rank because only strictly
    smaller values count.
    """
    values = _as_matrix(values)
    M, L = values.shape
    R = np.empty((M, L), dtype=np.int64)
    for x in range(L):
        col = values[:, x]
        R[:, x] = np.searchsorted(np.sort(col), col, side="left") + 1
    return R


def pointwise_depths(values) -> np.ndarray:
    """Pointwise depth d(x) = 1 - |2 R(x) - M - 1| / M, in [1/M, 1]."""
    values = _as_matrix(values)
    M = values.shape[0]
    R = marginal_ranks(values)
    return (M - np.abs(2 * R - M - 1)) / M


def depth_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Depth CDF of every curve on the attainable-depth grid.

    Returns ``(grid, Phi)`` where ``grid`` holds the ascending attainable
    pointwise-depth values for this M and ``Phi[i, g]`` is the fraction of
    lags with d(x) <= grid[g]. Each row is a nondecreasing step function
    ending at 1.
    """
    d = pointwise_depths(values)
    M = values.shape[0]
    grid = np.unique((M - np.abs(2 * np.arange(1, M + 1) - M - 1)) / M)
    Phi = (d[:, :, None] <= grid[None, None, :]).mean(axis=1)
    return grid, Phi


def bd_depths(values) -> np.ndarray:
    """Band depth from the extreme ranks:
    ((min R - 1)(M - max R) + M - 1) / (M (M + 1))."""
    values = _as_matrix(values)
    M = values.shape[0]
    R = marginal_ranks(values)
    rmin = R.min(axis=1)
    rmax = R.max(axis=1)
    return ((rmin - 1) * (M - rmax) + M - 1) / (M * (M + 1))


def _max_rank_product(M: int) -> int:
    r = (M + 1) // 2
    return max((r - 1) * (M - r), (r) * (M - r - 1) if r < M else 0)


def mbd_depths(values, variant: str = "printed", normalize: bool = False) -> np.ndarray:
    """Modified band depth, averaging (R-1)(M-R) across lags.

    ``variant="printed"`` divides each lag term by M - L - 1 and the sum by
    M (M + 1); that normalizer is only positive for M > L + 1, so smaller
    collections must use ``variant="classical"``, the pairwise band
    fraction ((R-1)(M-R) + M - 1) / C(M, 2) averaged over lags. Both give
    the same ordering whenever the printed variant is defined.
    ``normalize=True`` rescales the printed variant onto [0, 1].
    """
    values = _as_matrix(values)
    M, L = values.shape
    R = marginal_ranks(values)
    products = (R - 1) * (M - R)
    if variant == "classical":
        return (products + M - 1).sum(axis=1) / (L * M * (M - 1) / 2.0)
    if variant != "printed":
        raise ValueError(f"unknown MBD variant {variant!r}")
    if M <= L + 1:
        raise ValidationError(
            f"printed MBD normalizer M - {L} - 1 is not positive for M={M}; "
            "use variant='classical'"
        )
    if normalize:
        return products.sum(axis=1) / (L * _max_rank_product(M))
    return products.sum(axis=1) / float((M - L - 1) * M * (M + 1))


def exd_depths(values) -> np.ndarray:
    """Extremal depth of every curve within the collection.

    Curves are ordered by the left-tail stochastic order of their depth
    CDFs; the comparison is carried out exactly on integers by sorting
    each curve's pointwise depths and comparing lexicographically. The
    order is reflexive, so a curve that dominates all others scores 1.
    """
    values = _as_matrix(values)
    M = values.shape[0]
    R = marginal_ranks(values)
    E = np.sort(M - np.abs(2 * R - M - 1), axis=1)
    return exd_dominance_counts(E) / M


@dataclass
class DepthReport:
    """Depth values with the induced deepest-first ranking."""

    method: str
    curve_ids: list[str]
    depths: np.ndarray

    def __post_init__(self):
        if len(self.curve_ids) != len(self.depths):
            raise ValidationError("curve_ids and depths disagree in length")
        # stable sort: ties resolved by input order
        self.order = np.argsort(-self.depths, kind="stable")

    @property
    def ranking(self) -> list[str]:
        return [self.curve_ids[i] for i in self.order]

    @property
    def median_curve(self) -> str:
        return self.curve_ids[self.order[0]]

    def rank_of(self, curve_id: str) -> int:
        return self.ranking.index(curve_id) + 1


def _report(method: str, curves: list[DevCurve], depths: np.ndarray) -> DepthReport:
    return DepthReport(method=method, curve_ids=[c.curve_id for c in curves], depths=depths)


def band_depth(curves: list[DevCurve]) -> DepthReport:
    return _report("BD", curves, bd_depths(curve_matrix(curves)))


def modified_band_depth(curves: list[DevCurve], variant: str = "printed",
                        normalize: bool = False) -> DepthReport:
    return _report("MBD", curves, mbd_depths(curve_matrix(curves), variant, normalize))


def extremal_depth(curves: list[DevCurve]) -> DepthReport:
    return _report("EXD", curves, exd_depths(curve_matrix(curves)))


DEPTH_METHODS = {"bd": band_depth, "mbd": modified_band_depth, "exd": extremal_depth}


# ---------------------------------------------------------------------------
# Outlier flagging and central envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutlierRule:
    """Pluggable flagging rule on depth values.

    kind="count" flags the k shallowest curves; kind="threshold" flags
    depths strictly below ``value``; kind="fence" flags depths below
    Q1 - 1.5 IQR of the depth distribution.
    """

    kind: str
    k: int | None = None
    value: float | None = None

    @classmethod
    def parse(cls, text: str) -> "OutlierRule":
        if text == "fence":
            return cls(kind="fence")
        if text.startswith("count:"):
            return cls(kind="count", k=int(text.split(":", 1)[1]))
        if text.startswith("threshold:"):
            return cls(kind="threshold", value=float(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse outlier rule {text!r}")


def flag_outliers(report: DepthReport, rule: OutlierRule) -> set[str]:
    """Curve ids whose depth falls below the rule's cutoff."""
    depths = report.depths
    M = len(depths)
    if rule.kind == "count":
        if rule.k is None or rule.k < 0 or rule.k > M:
            raise ValueError(f"count rule needs 0 <= k <= {M}")
        shallowest = np.argsort(depths, kind="stable")[: rule.k]
        return {report.curve_ids[i] for i in shallowest}
    if rule.kind == "threshold":
        return {cid for cid, d in zip(report.curve_ids, depths) if d < rule.value}
    if rule.kind == "fence":
        q1, q3 = np.quantile(depths, [0.25, 0.75])
        cut = q1 - 1.5 * (q3 - q1)
        return {cid for cid, d in zip(report.curve_ids, depths) if d < cut}
    raise ValueError(f"unknown rule kind {rule.kind!r}")


@dataclass
class Envelope:
    """Pointwise min/max band over the deepest curves at central level 1-alpha."""

    alpha: float
    lower: np.ndarray
    upper: np.ndarray
    member_ids: list[str]


def central_envelope(curves: list[DevCurve], report: DepthReport, alpha: float) -> Envelope:
    """Envelope of the ceil((1 - alpha) M) deepest curves."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    values = curve_matrix(curves)
    ids = [c.curve_id for c in curves]
    if ids != report.curve_ids:
        raise ValidationError("depth report was computed on a different collection")
    n_keep = int(np.ceil((1 - alpha) * len(curves)))
    members = report.order[:n_keep]
    sub = values[members]
    return Envelope(
        alpha=alpha,
        lower=sub.min(axis=0),
        upper=sub.max(axis=0),
        member_ids=[ids[i] for i in members],
    )


@dataclass
class StratumResult:
    group: str
    n: int
    sufficient: bool
    median_id: str | None = None
    median_curve: np.ndarray | None = None
    envelope: Envelope | None = None


_FEATURE_SELECTORS = ("business_focus", "ownership", "geography")


def stratified_envelopes(
    curves: list[DevCurve],
    group_by: str | Callable[[DevCurve], str],
    alpha: float,
    min_size: int = 2,
) -> dict[str, StratumResult]:
    """Per-group EXD median curve and central envelope.

    ``group_by`` is a feature name (business_focus, ownership, geography)
    or a callable. Groups smaller than ``min_size`` come back flagged
    insufficient instead of raising.
    """
    if callable(group_by):
        selector = group_by
    elif group_by in _FEATURE_SELECTORS:
        def selector(c, _name=group_by):
            if c.features is None:
                raise ValidationError(f"curve {c.curve_id} carries no features")
            return getattr(c.features, _name)
    else:
        raise ValueError(f"unknown feature selector {group_by!r}")

    groups: dict[str, list[DevCurve]] = {}
    for c in curves:
        groups.setdefault(selector(c), []).append(c)

    out = {}
    for name in sorted(groups):
        members = groups[name]
        if len(members) < max(min_size, 2):
            out[name] = StratumResult(group=name, n=len(members), sufficient=False)
            continue
        report = extremal_depth(members)
        env = central_envelope(members, report, alpha)
        deepest = members[report.order[0]]
        out[name] = StratumResult(
            group=name,
            n=len(members),
            sufficient=True,
            median_id=deepest.curve_id,
            median_curve=deepest.ilr.copy(),
            envelope=env,
        )
    return out
