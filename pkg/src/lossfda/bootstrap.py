"""Functional bootstrap for completion forecasts.

Each replicate resamples the training pairs, refits the score regressions,
re-solves the closed-form completion, and adds a whole resampled residual
curve over the future lags, preserving cross-lag dependence. The FPCA
basis stays fixed across replicates by default so score spaces remain
comparable; ``refit_basis=True`` re-estimates it per replicate for
sensitivity analysis. All draws derive from one seed, so ensembles are
bitwise reproducible and independent of evaluation order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._kernels import lasso_cd
from .depth import exd_depths
from .errors import DegenerateResampleError, ValidationError
from .fpca import fit_fpca
from .seeding import spawn_rng
from .triangles import N_LAGS, DevCurve

RETRY_CAP = 10
DEFAULT_B = 1000


@dataclass
class BootstrapWorlds:
    """Target-independent replicate state: resamples and refit regressions."""

    B: int
    seed: int
    resample: str
    refit_basis: bool
    indices: list            # per replicate, row indices into the training set
    attempts: np.ndarray     # resample attempt that succeeded, per replicate
    coefs: np.ndarray        # (B, K, p) de-standardized coefficients
    intercepts: np.ndarray   # (B, K)
    refit_iters: np.ndarray  # (B, K) coordinate-descent sweeps
    means: np.ndarray | None = None   # (B, 10) when refit_basis
    bases: np.ndarray | None = None   # (B, 10, K) when refit_basis


def _refit_factors(X, scores, penalties):
    """Refit each factor's LASSO at its frozen penalty; Gram form."""
    N, p = X.shape
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    dropped = x_scale == 0.0
    safe = np.where(dropped, 1.0, x_scale)
    Xs = (X - x_mean) / safe
    G = Xs.T @ Xs / N
    if dropped.any():
        G[dropped, :] = 0.0
        G[:, dropped] = 0.0
    K = scores.shape[1]
    coefs = np.zeros((K, p))
    intercepts = np.zeros(K)
    iters = np.zeros(K, dtype=np.int64)
    for k in range(K):
        y = scores[:, k]
        c = Xs.T @ (y - y.mean()) / N
        theta, n_iter, _ = lasso_cd(G, c, float(penalties[k]))
        coef = np.where(dropped, 0.0, theta / safe)
        coefs[k] = coef
        intercepts[k] = y.mean() - coef @ x_mean
        iters[k] = n_iter
    return coefs, intercepts, iters


def make_worlds(trained, B: int, seed: int, resample: str = "curve",
                refit_basis: bool = False) -> BootstrapWorlds:
    """Draw B bootstrap worlds from a trained pipeline.

    ``resample="curve"`` resamples (feature, curve) pairs; ``"company"``
    resamples whole companies, keeping each company's curves together.
    Degenerate draws (fewer than two distinct source rows) are retried up
    to 10 times before raising.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if resample not in ("curve", "company"):
        raise ValueError(f"unknown resample level {resample!r}")
    N = trained.n_train
    K = trained.fpca.K
    p = trained.X.shape[1]
    penalties = trained.prior.penalties

    company_rows = None
    if resample == "company":
        company_rows = {}
        for i, cid in enumerate(trained.companies):
            company_rows.setdefault(cid, []).append(i)
        company_ids = sorted(company_rows)

    indices = []
    attempts = np.zeros(B, dtype=np.int64)
    coefs = np.zeros((B, K, p))
    intercepts = np.zeros((B, K))
    refit_iters = np.zeros((B, K), dtype=np.int64)
    means = np.zeros((B, N_LAGS)) if refit_basis else None
    bases = np.zeros((B, N_LAGS, K)) if refit_basis else None

    for b in range(B):
        idx = None
        for attempt in range(RETRY_CAP):
            rng = spawn_rng(seed, "world", b, attempt)
            if resample == "curve":
                cand = rng.integers(0, N, size=N)
            else:
                chosen = rng.integers(0, len(company_ids), size=len(company_ids))
                cand = np.concatenate([company_rows[company_ids[j]] for j in chosen])
            if len(np.unique(cand)) >= 2:
                idx = np.sort(cand)
                attempts[b] = attempt
                break
        if idx is None:
            raise DegenerateResampleError(
                f"replicate {b}: {RETRY_CAP} degenerate resamples in a row"
            )
        indices.append(idx)
        Xb = trained.X[idx]
        if refit_basis:
            model_b = fit_fpca(trained.Y[idx], K)
            means[b] = model_b.mean
            bases[b] = model_b.eigenfunctions
            scores_b = (trained.Y[idx] - model_b.mean) @ model_b.eigenfunctions
        else:
            scores_b = trained.scores[idx]
        coefs[b], intercepts[b], refit_iters[b] = _refit_factors(Xb, scores_b, penalties)

    return BootstrapWorlds(
        B=B, seed=seed, resample=resample, refit_basis=refit_basis,
        indices=indices, attempts=attempts, coefs=coefs, intercepts=intercepts,
        refit_iters=refit_iters, means=means, bases=bases,
    )


@dataclass
class BootstrapEnsemble:
    """B forecast paths over the future lags of one partial curve."""

    curve_id: str
    s: int
    lags: np.ndarray
    ilr_paths: np.ndarray   # (B, 10 - s)
    clr_paths: np.ndarray   # (B, 10 - s), anchored at observed c(s-1)
    seed: int
    attempts: np.ndarray
    refit_iters: np.ndarray

    @property
    def B(self) -> int:
        return self.ilr_paths.shape[0]


def bootstrap_forecast(trained, partial: DevCurve, lam: float, B: int = DEFAULT_B,
                       seed: int = 0, worlds: BootstrapWorlds | None = None,
                       resample: str = "curve",
                       refit_basis: bool = False) -> BootstrapEnsemble:
    """Bootstrap the forecast distribution of one partial curve.

    Prebuilt ``worlds`` (from :func:`make_worlds`) can be shared across
    targets; they must match B, seed, and the resampling options, and the
    result is identical to building them in place.
    """
    if worlds is None:
        worlds = make_worlds(trained, B=B, seed=seed, resample=resample,
                             refit_basis=refit_basis)
    if (worlds.B, worlds.seed, worlds.resample, worlds.refit_basis) != (
            B, seed, resample, refit_basis):
        raise ValueError("worlds were built with different bootstrap settings")

    s = partial.observed_through + 1
    if s >= N_LAGS:
        raise ValidationError(f"{partial.curve_id} is already complete")
    lags = np.arange(s, N_LAGS)
    x = trained.encoder.encode(partial)
    y_e = partial.ilr[:s]
    c_last = float(np.sum(y_e))
    K = trained.fpca.K

    priors = worlds.intercepts + worlds.coefs @ x  # (B, K)

    rng = spawn_rng(seed, "residual", partial.curve_id, s)
    u = rng.random(B)

    if not worlds.refit_basis:
        phi = trained.fpca.eigenfunctions
        phi_e, phi_l = phi[:s], phi[s:]
        A = phi_e.T @ phi_e + lam * np.eye(K)
        base_rhs = phi_e.T @ (y_e - trained.fpca.mean[:s])
        beta = np.linalg.solve(A, base_rhs[:, None] + lam * priors.T)  # (K, B)
        mean_part = trained.fpca.mean[s:][None, :] + (phi_l @ beta).T  # (B, 10-s)
        eps = np.empty((B, N_LAGS - s))
        for b in range(B):
            pool = worlds.indices[b]
            row = pool[int(u[b] * len(pool))]
            eps[b] = trained.residuals[row, s:]
        ilr_paths = mean_part + eps
    else:
        ilr_paths = np.empty((B, N_LAGS - s))
        for b in range(B):
            mu_b = worlds.means[b]
            phi_b = worlds.bases[b]
            phi_e, phi_l = phi_b[:s], phi_b[s:]
            A = phi_e.T @ phi_e + lam * np.eye(K)
            rhs = phi_e.T @ (y_e - mu_b[:s]) + lam * priors[b]
            beta = np.linalg.solve(A, rhs)
            pool = worlds.indices[b]
            row = pool[int(u[b] * len(pool))]
            centered = trained.Y[row] - mu_b
            resid = centered - phi_b @ (phi_b.T @ centered)
            ilr_paths[b] = mu_b[s:] + phi_l @ beta + resid[s:]

    return BootstrapEnsemble(
        curve_id=partial.curve_id,
        s=s,
        lags=lags,
        ilr_paths=ilr_paths,
        clr_paths=c_last + np.cumsum(ilr_paths, axis=1),
        seed=seed,
        attempts=worlds.attempts,
        refit_iters=worlds.refit_iters,
    )


# ---------------------------------------------------------------------------
# Predictive regions
# ---------------------------------------------------------------------------


@dataclass
class PredictiveRegion:
    """Lower/upper band over future lags, pointwise or depth-based."""

    kind: str
    level: float
    lags: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    member_indices: np.ndarray | None = None


def _quantile_band(paths: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    # type-7 empirical quantiles (linear interpolation of order statistics)
    lo = np.quantile(paths, alpha / 2.0, axis=0)
    hi = np.quantile(paths, 1.0 - alpha / 2.0, axis=0)
    return lo, hi


def pointwise_region(paths: np.ndarray, alpha: float, lags: np.ndarray) -> PredictiveRegion:
    B = paths.shape[0]
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if B < int(np.ceil(2.0 / alpha)):
        raise ValueError(f"need at least ceil(2/alpha)={int(np.ceil(2 / alpha))} replicates")
    lo, hi = _quantile_band(paths, alpha)
    return PredictiveRegion(kind="pointwise", level=1 - alpha, lags=lags,
                            lower=lo, upper=hi)


def exd_region_paths(paths: np.ndarray, alpha: float, lags: np.ndarray) -> PredictiveRegion:
    B = paths.shape[0]
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if B < 10:
        raise ValueError("EXD region needs at least 10 replicates")
    depths = exd_depths(paths)
    members = np.flatnonzero(depths > alpha)
    sub = paths[members]
    return PredictiveRegion(kind="exd", level=1 - alpha, lags=lags,
                            lower=sub.min(axis=0), upper=sub.max(axis=0),
                            member_indices=members)


def pointwise_interval(ensemble: BootstrapEnsemble, alpha: float) -> PredictiveRegion:
    """Per-lag empirical quantile band on the ILR scale."""
    return pointwise_region(ensemble.ilr_paths, alpha, ensemble.lags)


def exd_region(ensemble: BootstrapEnsemble, alpha: float) -> PredictiveRegion:
    """Envelope of the replicate ILR paths with extremal depth above alpha."""
    return exd_region_paths(ensemble.ilr_paths, alpha, ensemble.lags)


def clr_region(ensemble: BootstrapEnsemble, alpha: float, kind: str = "exd") -> PredictiveRegion:
    """Band on the cumulative scale, built from cumulated replicate paths."""
    if kind == "pointwise":
        return pointwise_region(ensemble.clr_paths, alpha, ensemble.lags)
    if kind == "exd":
        return exd_region_paths(ensemble.clr_paths, alpha, ensemble.lags)
    raise ValueError(f"unknown region kind {kind!r}")


def ensemble_rows(ensemble: BootstrapEnsemble) -> list[list]:
    """Rows (replicate, lag, ilr, clr) for CSV export."""
    rows = []
    for b in range(ensemble.B):
        for j, lag in enumerate(ensemble.lags):
            rows.append([b, int(lag), ensemble.ilr_paths[b, j], ensemble.clr_paths[b, j]])
    return rows


def region_rows(regions: list[PredictiveRegion]) -> list[list]:
    """Rows (lag, kind, level, lower, upper) for CSV export."""
    rows = []
    for region in regions:
        for j, lag in enumerate(region.lags):
            rows.append([int(lag), region.kind, region.level,
                         region.lower[j], region.upper[j]])
    return rows
