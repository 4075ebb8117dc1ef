"""Sparse regression of PCA scores on company features.

Each factor's scores are regressed on the encoded feature vector with an
l1 penalty, giving a prior score for curves whose development is not yet
observed. Features are standardized to unit variance before penalization
so one penalty is meaningful across one-hot and continuous columns;
reported coefficients are mapped back to the original scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import lasso_cd
from .errors import ConvergenceWarning, ValidationError
from .fpca import ScoreMatrix
from .seeding import spawn_rng

MAX_ITER = 100_000
CD_TOL = 1e-8


@dataclass(frozen=True)
class CVSpec:
    """Cross-validation request for per-factor penalty selection.

    ``lambdas=None`` builds a log-spaced path from the null-model penalty
    down by ``path_ratio``. Folds are formed at the company level so one
    company's curves never straddle train and validation.
    """

    n_folds: int = 10
    lambdas: tuple | None = None
    n_lambdas: int = 25
    path_ratio: float = 1e-3
    seed: int = 0


@dataclass
class FactorFit:
    """De-standardized LASSO solution for one factor."""

    intercept: float
    coef: np.ndarray
    penalty: float
    converged: bool
    n_iter: int
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.atleast_2d(X) @ self.coef


@dataclass
class ScorePrior:
    """Per-factor regression priors beta^RM."""

    feature_names: list[str]
    factors: list[FactorFit]

    @property
    def K(self) -> int:
        return len(self.factors)

    @property
    def penalties(self) -> np.ndarray:
        return np.array([f.penalty for f in self.factors])

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.feature_names),):
            raise ValidationError(
                f"feature vector length {x.shape} does not match encoding "
                f"({len(self.feature_names)})"
            )
        return np.array([f.intercept + x @ f.coef for f in self.factors])

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([f.predict(X) for f in self.factors])


def _standardize(X: np.ndarray):
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    dropped = x_scale == 0.0
    safe = np.where(dropped, 1.0, x_scale)
    return (X - x_mean) / safe, x_mean, x_scale, dropped


def _fit_one(Xs, dropped, y, penalty, x_mean, x_scale) -> FactorFit:
    N = Xs.shape[0]
    y_mean = float(y.mean())
    yc = y - y_mean
    G = Xs.T @ Xs / N
    if dropped.any():
        G[dropped, :] = 0.0
        G[:, dropped] = 0.0
    c = Xs.T @ yc / N
    theta, n_iter, ok = lasso_cd(G, c, penalty, max_iter=MAX_ITER, tol=CD_TOL)
    if not ok:
        warnings.warn(
            f"coordinate descent hit the {MAX_ITER}-sweep cap (penalty={penalty})",
            ConvergenceWarning,
        )
    coef = np.where(dropped, 0.0, theta / np.where(x_scale == 0, 1.0, x_scale))
    intercept = y_mean - float(coef @ x_mean)
    return FactorFit(
        intercept=intercept, coef=coef, penalty=float(penalty),
        converged=ok, n_iter=n_iter,
        x_mean=x_mean, x_scale=x_scale, y_mean=y_mean,
    )


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty at which the LASSO solution is all zeros."""
    Xs, _, _, dropped = _standardize(np.asarray(X, dtype=float))
    yc = y - y.mean()
    grad = np.abs(Xs.T @ yc) / len(y)
    grad[dropped] = 0.0
    return float(grad.max())


def _company_folds(groups: list[str], n_folds: int, seed: int) -> np.ndarray:
    """Fold id per row; all rows of a company share a fold."""
    companies = sorted(set(groups))
    order = spawn_rng(seed, "cv-folds").permutation(len(companies))
    fold_of = {companies[j]: i % n_folds for i, j in enumerate(order)}
    return np.array([fold_of[g] for g in groups])


def _cv_penalty(X, y, spec: CVSpec, groups) -> float:
    if spec.lambdas is not None:
        path = np.asarray(spec.lambdas, dtype=float)
    else:
        lam_hi = lambda_max(X, y)
        if lam_hi == 0.0:
            return 0.0
        path = lam_hi * np.logspace(0, np.log10(spec.path_ratio), spec.n_lambdas)
    if groups is None:
        groups = [str(i) for i in range(len(y))]
    folds = _company_folds(groups, min(spec.n_folds, len(set(groups))), spec.seed)
    mse = np.zeros(len(path))
    counts = np.zeros(len(path))
    for f in np.unique(folds):
        tr, va = folds != f, folds == f
        if tr.sum() < 2 or va.sum() == 0:
            continue
        Xs, x_mean, x_scale, dropped = _standardize(X[tr])
        for i, lam in enumerate(path):
            fit = _fit_one(Xs, dropped, y[tr], lam, x_mean, x_scale)
            err = y[va] - fit.predict(X[va])
            mse[i] += float(err @ err)
            counts[i] += va.sum()
    scores = mse / np.maximum(counts, 1)
    # ties toward the larger penalty (sparser model)
    best = scores.min()
    return float(max(path[scores <= best + 1e-15]))


def fit_lasso(
    B: ScoreMatrix | np.ndarray,
    X: np.ndarray,
    penalty,
    feature_names: list[str] | None = None,
    groups: list[str] | None = None,
) -> ScorePrior:
    """Fit one LASSO per factor via cyclic coordinate descent.

    ``penalty`` is a nonnegative float shared across factors, a sequence
    with one value per factor, or a :class:`CVSpec` to pick each factor's
    penalty by company-stratified cross-validation. Zero-variance feature
    columns are dropped (coefficient 0) with a warning.
    """
    scores = B.B if isinstance(B, ScoreMatrix) else np.asarray(B, dtype=float)
    X = np.asarray(X, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    if X.shape[0] != scores.shape[0]:
        raise ValidationError("feature rows and score rows are not aligned")
    if not (np.isfinite(X).all() and np.isfinite(scores).all()):
        raise ValidationError("non-finite inputs to fit_lasso")
    K = scores.shape[1]
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(X.shape[1])]

    Xs, x_mean, x_scale, dropped = _standardize(X)
    if dropped.any():
        names = [feature_names[j] for j in np.flatnonzero(dropped)]
        warnings.warn(f"dropping zero-variance feature columns: {names}")

    factors = []
    for k in range(K):
        y = scores[:, k]
        if isinstance(penalty, CVSpec):
            lam = _cv_penalty(X, y, penalty, groups)
        elif np.ndim(penalty) == 0:
            lam = float(penalty)
        else:
            lam = float(np.asarray(penalty)[k])
        if lam < 0:
            raise ValueError("penalty must be nonnegative")
        factors.append(_fit_one(Xs, dropped, y, lam, x_mean, x_scale))
    return ScorePrior(feature_names=list(feature_names), factors=factors)


def predict_prior(prior: ScorePrior, x: np.ndarray) -> np.ndarray:
    """Regression prior score vector for one encoded feature vector."""
    return prior.predict(x)


def kkt_violation(fit: FactorFit, X: np.ndarray, y: np.ndarray) -> float:
    """Worst KKT gap of a factor fit, on the standardized scale.

    Zero (up to solver tolerance) at an exact LASSO solution: active
    coefficients must have |gradient| == penalty and inactive ones
    |gradient| <= penalty.
    """
    Xs = (X - fit.x_mean) / np.where(fit.x_scale == 0, 1.0, fit.x_scale)
    r = y - fit.predict(X)
    grad = Xs.T @ r / len(y)
    theta_std = fit.coef * fit.x_scale
    gap = 0.0
    for j in range(len(theta_std)):
        if fit.x_scale[j] == 0:
            continue
        if theta_std[j] != 0.0:
            gap = max(gap, abs(abs(grad[j]) - fit.penalty),
                      abs(grad[j] - np.sign(theta_std[j]) * fit.penalty))
        else:
            gap = max(gap, abs(grad[j]) - fit.penalty)
    return float(gap)


def coefficient_rows(priors_by_s: dict, feature_names: list[str]) -> list[list]:
    """Rows (s, k, coefficients...) with blanks for exact zeros."""
    rows = []
    for s in sorted(priors_by_s):
        prior = priors_by_s[s]
        for k, fit in enumerate(prior.factors, start=1):
            cells = ["" if c == 0.0 else c for c in fit.coef]
            rows.append([s if s is not None else "", k, *cells])
    return rows
