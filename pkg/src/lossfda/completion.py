"""Completion of partially developed curves by penalized least squares.

A partial curve observed on lags 0..s-1 is projected onto the FPCA basis
with an l2 pull toward its regression-prior scores; the closed form

    beta = (Phi_e' Phi_e + lam I)^{-1} (Phi_e' (y_e - mu_e) + lam beta_RM)

trades fit to the observed stub against the prior, with the penalty
dominating for short stubs. The module also houses the (K, lambda) tuner,
the fixed-origin backtest, and the sequential triangle-completion loop.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, SingularityError, ValidationError
from .fpca import FpcaModel, fit_fpca, residual_matrix, score_matrix
from .regression import CVSpec, ScorePrior, fit_lasso
from .seeding import spawn_rng
from .triangles import N_LAGS, DevCurve, FeatureEncoder, curve_matrix

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = np.logspace(-4, 0, 25)


def default_k_grid(s: int) -> list[int]:
    return list(range(1, min(N_LAGS, s + 3) + 1))


@dataclass
class CompletedCurve:
    """A partial curve extended over its missing lags."""

    company_id: str
    accident_year: int
    s: int
    beta_pls: np.ndarray
    fitted_ilr: np.ndarray          # model curve over all 10 lags
    forecast_ilr: np.ndarray        # lags s..9
    forecast_clr: np.ndarray        # lags s..9, anchored at observed c(s-1)
    observed_clr_last: float
    provenance: dict = field(default_factory=dict)

    @property
    def curve_id(self) -> str:
        return f"{self.company_id}:{self.accident_year}"

    @property
    def ultimate_clr(self) -> float:
        if len(self.forecast_clr):
            return float(self.forecast_clr[-1])
        return float(self.observed_clr_last)


def model_hash(model: FpcaModel) -> str:
    return hashlib.sha256(model.to_json().encode("utf-8")).hexdigest()[:12]


def complete_pls(
    model: FpcaModel,
    prior_scores: np.ndarray,
    partial: DevCurve,
    lam: float,
) -> CompletedCurve:
    """Complete one partial curve with the closed-form PLS solution.

    Raises SingularityError when ``lam == 0`` and the restricted basis is
    rank deficient (always the case for s < K).
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    prior_scores = np.asarray(prior_scores, dtype=float)
    if prior_scores.shape != (model.K,):
        raise ValidationError(
            f"prior has length {prior_scores.shape}, model K={model.K}"
        )
    s = partial.observed_through + 1
    if s < 1:
        raise ValidationError("partial curve must have at least one observed lag")
    phi_e = model.eigenfunctions[:s, :]
    y_e = partial.ilr[:s]
    if np.isnan(y_e).any():
        raise ValidationError(f"{partial.curve_id}: NaN inside the observed prefix")
    A = phi_e.T @ phi_e + lam * np.eye(model.K)
    if lam == 0.0 and np.linalg.matrix_rank(phi_e) < model.K:
        raise SingularityError(
            f"restricted basis is rank deficient at s={s}, K={model.K}; use lam > 0"
        )
    rhs = phi_e.T @ (y_e - model.mean[:s]) + lam * prior_scores
    beta = np.linalg.solve(A, rhs)
    fitted = model.mean + model.eigenfunctions @ beta
    forecast_ilr = fitted[s:]
    c_last = float(np.sum(y_e))
    return CompletedCurve(
        company_id=partial.company_id,
        accident_year=partial.accident_year,
        s=s,
        beta_pls=beta,
        fitted_ilr=fitted,
        forecast_ilr=forecast_ilr,
        forecast_clr=c_last + np.cumsum(forecast_ilr),
        observed_clr_last=c_last,
        provenance={"model_hash": model_hash(model), "lam": float(lam), "K": model.K},
    )


def pls_objective(model: FpcaModel, prior_scores, partial: DevCurve, lam: float, beta):
    """Objective value and gradient of the penalized least squares problem."""
    beta = np.asarray(beta, dtype=float)
    s = partial.observed_through + 1
    phi_e = model.eigenfunctions[:s, :]
    resid = partial.ilr[:s] - model.mean[:s] - phi_e @ beta
    dev = beta - np.asarray(prior_scores, dtype=float)
    value = float(resid @ resid + lam * dev @ dev)
    grad = -2.0 * phi_e.T @ resid + 2.0 * lam * dev
    return value, grad


def truncate_curve(curve: DevCurve, s: int) -> DevCurve:
    """Copy of ``curve`` observed only through lag s-1."""
    if not 1 <= s <= curve.observed_through + 1:
        raise ValueError(f"cannot truncate {curve.curve_id} to s={s}")
    ilr = np.full(N_LAGS, np.nan)
    ilr[:s] = curve.ilr[:s]
    return DevCurve(
        company_id=curve.company_id,
        accident_year=curve.accident_year,
        ilr=ilr,
        observed_through=s - 1,
        premium=curve.premium,
        features=curve.features,
    )


# ---------------------------------------------------------------------------
# Trained pipeline bundle
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    """FPCA basis, regression priors, and training-set artifacts."""

    fpca: FpcaModel
    prior: ScorePrior
    encoder: FeatureEncoder
    curve_ids: list[str]
    companies: list[str]
    Y: np.ndarray           # (N, 10) training curves
    X: np.ndarray           # (N, p) encoded features
    scores: np.ndarray      # (N, K)
    residuals: np.ndarray   # (N, 10) after K-factor reconstruction

    @property
    def n_train(self) -> int:
        return self.Y.shape[0]

    def prior_scores(self, curve: DevCurve) -> np.ndarray:
        return self.prior.predict(self.encoder.encode(curve))

    def complete(self, partial: DevCurve, lam: float) -> CompletedCurve:
        return complete_pls(self.fpca, self.prior_scores(partial), partial, lam)


def fit_pipeline(
    curves: list[DevCurve],
    K: int,
    lasso_penalty=None,
    encoder: FeatureEncoder | None = None,
) -> TrainedModel:
    """Fit FPCA and per-factor score regressions on complete curves."""
    if lasso_penalty is None:
        lasso_penalty = CVSpec()
    encoder = encoder or FeatureEncoder.for_curves(curves)
    Y = curve_matrix(curves)
    model = fit_fpca(Y, K)
    B = score_matrix(model, curves)
    X = encoder.matrix(curves)
    companies = [c.company_id for c in curves]
    prior = fit_lasso(B, X, lasso_penalty, feature_names=encoder.names, groups=companies)
    return TrainedModel(
        fpca=model,
        prior=prior,
        encoder=encoder,
        curve_ids=[c.curve_id for c in curves],
        companies=companies,
        Y=Y,
        X=X,
        scores=B.B,
        residuals=residual_matrix(model, Y),
    )


# ---------------------------------------------------------------------------
# (K, lambda) tuning
# ---------------------------------------------------------------------------


@dataclass
class TuneResult:
    s: int
    K: int
    lam: float
    mape: float
    n_train: int
    table: list  # rows (K, lam, mean validation MAPE)


def _batch_ultimate(trained: TrainedModel, val_curves: list[DevCurve], s: int,
                    K: int, lam: float) -> np.ndarray:
    """Ultimate CLR forecasts for validation curves truncated to s lags."""
    phi = trained.fpca.eigenfunctions[:, :K]
    phi_e = phi[:s, :]
    A = phi_e.T @ phi_e + lam * np.eye(K)
    Ye = np.array([c.ilr[:s] for c in val_curves])
    priors = np.array([trained.prior_scores(c)[:K] for c in val_curves])
    rhs = phi_e.T @ (Ye - trained.fpca.mean[:s]).T + lam * priors.T
    beta = np.linalg.solve(A, rhs)  # (K, n_val)
    fitted_tail = trained.fpca.mean[s:][:, None] + phi[s:, :] @ beta  # (10-s, n_val)
    c_last = Ye.sum(axis=1)
    return c_last + fitted_tail.sum(axis=0)


def tune(
    curves: list[DevCurve],
    K_grid,
    lam_grid,
    s: int,
    n_folds: int = 5,
    seed: int = 0,
    lasso_penalty=None,
    encoder: FeatureEncoder | None = None,
) -> TuneResult:
    """Select (K, lambda) for stub length s by company-stratified CV.

    Each validation curve is truncated to its first s lags, completed, and
    scored by MAPE of its ultimate CLR. The minimizing grid point wins;
    near-ties go to the smaller K, then the larger lambda. Infeasible grid
    points (K above the fold training size, or lam == 0 with s < K) are
    skipped with a warning.
    """
    K_grid = sorted(set(int(k) for k in K_grid))
    lam_grid = sorted(set(float(l) for l in lam_grid))
    if not K_grid or not lam_grid:
        raise ValueError("empty tuning grid")
    if not 1 <= s <= N_LAGS:
        raise ValueError(f"s must lie in 1..{N_LAGS}")
    curve_matrix(curves)  # completeness check
    encoder = encoder or FeatureEncoder.for_curves(curves)

    companies = [c.company_id for c in curves]
    uniq = sorted(set(companies))
    n_folds = min(n_folds, len(uniq))
    order = spawn_rng(seed, "tune-folds", s).permutation(len(uniq))
    fold_of = {uniq[j]: i % n_folds for i, j in enumerate(order)}
    folds = np.array([fold_of[c] for c in companies])

    K_max = min(max(K_grid), N_LAGS)
    err_sum = {(K, lam): 0.0 for K in K_grid for lam in lam_grid}
    err_n = {(K, lam): 0 for K in K_grid for lam in lam_grid}
    skipped = set()

    for f in range(n_folds):
        tr_idx = np.flatnonzero(folds != f)
        va_idx = np.flatnonzero(folds == f)
        if len(tr_idx) < 2 or len(va_idx) == 0:
            continue
        train = [curves[i] for i in tr_idx]
        val = [curves[i] for i in va_idx]
        K_fit = min(K_max, len(train))
        trained = fit_pipeline(train, K_fit, lasso_penalty=lasso_penalty, encoder=encoder)
        truth = np.array([float(np.sum(c.ilr)) for c in val])
        usable = truth != 0.0
        if not usable.all():
            warnings.warn("validation curves with zero ultimate CLR excluded from MAPE")
        for K in K_grid:
            if K > len(train):
                skipped.add((K, None))
                continue
            for lam in lam_grid:
                if lam == 0.0 and s < K:
                    skipped.add((K, lam))
                    continue
                try:
                    ult = _batch_ultimate(trained, val, s, K, lam)
                except np.linalg.LinAlgError:
                    skipped.add((K, lam))
                    continue
                ape = np.abs(ult[usable] - truth[usable]) / np.abs(truth[usable])
                err_sum[(K, lam)] += float(ape.sum())
                err_n[(K, lam)] += int(usable.sum())

    if skipped:
        warnings.warn(f"skipped infeasible grid points: {sorted(skipped)[:8]}")
    table = []
    for K in K_grid:
        for lam in lam_grid:
            if err_n[(K, lam)] > 0:
                table.append((K, lam, err_sum[(K, lam)] / err_n[(K, lam)]))
    if not table:
        raise InsufficientDataError("no feasible grid point could be evaluated")

    best_mape = min(row[2] for row in table)
    tol = max(1e-12, 1e-9 * best_mape)
    tied = [row for row in table if row[2] <= best_mape + tol]
    tied.sort(key=lambda row: (row[0], -row[1]))
    K_best, lam_best, _ = tied[0]
    mape_best = next(m for K, lam, m in table if K == K_best and lam == lam_best)
    return TuneResult(s=s, K=K_best, lam=lam_best, mape=mape_best,
                      n_train=len(curves), table=table)


@dataclass
class CompletionConfig:
    """Tuned (K, lambda) per stub length with the validation MAPE attained."""

    entries: dict[int, TuneResult] = field(default_factory=dict)

    def add(self, result: TuneResult) -> None:
        if not 1 <= result.K <= N_LAGS or result.lam < 0:
            raise ValidationError("tuned entry violates K/lambda bounds")
        self.entries[result.s] = result

    def rows(self) -> list[list]:
        return [
            [s, e.n_train, e.K, e.lam, e.mape]
            for s, e in sorted(self.entries.items(), reverse=True)
        ]


# ---------------------------------------------------------------------------
# Fixed-origin backtest
# ---------------------------------------------------------------------------


@dataclass
class BacktestRecord:
    company_id: str
    s: int
    truth_ultimate: float
    forecast_ultimate: float
    lower: float
    upper: float


@dataclass
class BacktestResult:
    T: int
    records: list[BacktestRecord]
    skipped: list[tuple[str, str]]
    config: CompletionConfig


def fixed_origin_backtest(
    curves: list[DevCurve],
    company_ids: list[str],
    T: int,
    K_grid=None,
    lam_grid=None,
    B: int = 500,
    seed: int = 0,
    alpha: float = 0.05,
    n_folds: int = 5,
    lasso_penalty=None,
) -> BacktestResult:
    """Forecast AY-T ultimates for s = 1..9 and record 95% EXD intervals.

    Training uses fully developed curves with accident year <= T - 9; the
    focal accident year T curve is truncated to s lags and completed, and
    the bootstrap EXD region on the cumulative scale provides the interval
    (the pointwise interval when only lag 9 remains). Companies without a
    complete truth curve at T are skipped with a reason.
    """
    from .bootstrap import bootstrap_forecast, clr_region, make_worlds

    train = [c for c in curves if c.is_complete and c.accident_year <= T - 9]
    if len(train) < 2:
        raise InsufficientDataError("backtest needs training curves with AY <= T-9")
    truth_by_company = {
        c.company_id: c for c in curves if c.accident_year == T and c.is_complete
    }
    encoder = FeatureEncoder.for_curves(train)

    records: list[BacktestRecord] = []
    skipped: list[tuple[str, str]] = []
    config = CompletionConfig()
    lam_grid = DEFAULT_LAMBDA_GRID if lam_grid is None else lam_grid

    for s in range(1, N_LAGS):
        result = tune(
            train, K_grid if K_grid is not None else default_k_grid(s),
            lam_grid, s, n_folds=n_folds, seed=seed, lasso_penalty=lasso_penalty,
            encoder=encoder,
        )
        config.add(result)
        trained = fit_pipeline(train, result.K, lasso_penalty=lasso_penalty, encoder=encoder)
        worlds = make_worlds(trained, B=B, seed=seed)
        for cid in company_ids:
            truth = truth_by_company.get(cid)
            if truth is None:
                if s == 1:
                    skipped.append((cid, f"no complete truth curve at AY {T}"))
                continue
            partial = truncate_curve(truth, s)
            ensemble = bootstrap_forecast(
                trained, partial, result.lam, B=B, seed=seed, worlds=worlds
            )
            region = clr_region(ensemble, alpha, kind="exd")
            completed = trained.complete(partial, result.lam)
            records.append(BacktestRecord(
                company_id=cid,
                s=s,
                truth_ultimate=float(np.sum(truth.ilr)),
                forecast_ultimate=completed.ultimate_clr,
                lower=float(region.lower[-1]),
                upper=float(region.upper[-1]),
            ))
    return BacktestResult(T=T, records=records, skipped=skipped, config=config)


# ---------------------------------------------------------------------------
# Sequential triangle completion
# ---------------------------------------------------------------------------


@dataclass
class SequentialResult:
    T: int
    completed: list[CompletedCurve]
    config: CompletionConfig
    training_sizes: dict[int, int]  # per s


def sequential_completion(
    curves: list[DevCurve],
    start_ay: int,
    end_ay: int,
    K_grid=None,
    lam_grid=None,
    seed: int = 0,
    n_folds: int = 5,
    lasso_penalty=None,
) -> SequentialResult:
    """Complete the lower-right triangles from ``start_ay`` through ``end_ay``.

    Accident year t is expected to carry s = end_ay - t + 1 observed lags
    (the standard diagonal, with end_ay the latest calendar year). After
    each accident year is completed, its curves join the training set as
    pseudo-complete observations before the next, shorter stub is tuned.
    """
    T = end_ay
    if start_ay != T - 8:
        logger.info("sequential completion from AY %s (s=%s) to %s", start_ay,
                    T - start_ay + 1, T)
    train = [c for c in curves if c.is_complete and c.accident_year <= T - 9]
    if len(train) < 2:
        raise InsufficientDataError("need complete curves with AY <= T-9 to start")
    encoder = FeatureEncoder.for_curves(train)
    by_year: dict[int, list[DevCurve]] = {}
    for c in curves:
        if start_ay <= c.accident_year <= end_ay and not c.is_complete:
            by_year.setdefault(c.accident_year, []).append(c)

    lam_grid = DEFAULT_LAMBDA_GRID if lam_grid is None else lam_grid
    config = CompletionConfig()
    completed_all: list[CompletedCurve] = []
    training_sizes: dict[int, int] = {}

    for t in range(start_ay, end_ay + 1):
        s = T - t + 1
        if not 1 <= s <= 9:
            raise ValueError(f"AY {t} implies s={s} outside 1..9 for T={T}")
        training_sizes[s] = len(train)
        result = tune(
            train, K_grid if K_grid is not None else default_k_grid(s),
            lam_grid, s, n_folds=n_folds, seed=seed, lasso_penalty=lasso_penalty,
            encoder=encoder,
        )
        config.add(result)
        trained = fit_pipeline(train, result.K, lasso_penalty=lasso_penalty, encoder=encoder)
        for partial in by_year.get(t, []):
            if partial.observed_through != s - 1:
                logger.info("skipping %s: %d observed lags, expected %d",
                            partial.curve_id, partial.observed_through + 1, s)
                continue
            done = trained.complete(partial, result.lam)
            completed_all.append(done)
            pseudo_ilr = partial.ilr.copy()
            pseudo_ilr[s:] = done.forecast_ilr
            train.append(DevCurve(
                company_id=partial.company_id,
                accident_year=partial.accident_year,
                ilr=pseudo_ilr,
                observed_through=N_LAGS - 1,
                premium=partial.premium,
                features=partial.features,
            ))
    return SequentialResult(T=T, completed=completed_all, config=config,
                            training_sizes=training_sizes)
