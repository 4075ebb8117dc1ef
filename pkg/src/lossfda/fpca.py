"""Functional PCA of complete ILR curves on the 10-lag grid.

The inner product is the plain discrete sum over lags, so the model is an
eigendecomposition of the 10x10 sample covariance: mean function,
orthonormal eigenfunction columns, and nonincreasing eigenvalues. Scores
are projections of centered curves onto the eigenfunctions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ValidationError
from .triangles import N_LAGS, DevCurve, curve_matrix

ORTHO_TOL = 1e-10


@dataclass
class FpcaModel:
    """Truncated Karhunen-Loeve representation of the curve population.

    ``eigenfunctions`` is 10 x K with orthonormal columns; each column is
    sign-fixed so its largest-magnitude entry is nonnegative.
    ``total_variance`` (trace of the covariance) is kept from fitting for
    explained-variance ratios but is not part of the serialized form.
    """

    mean: np.ndarray
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    n_train: int
    total_variance: float | None = field(default=None, compare=False)

    @property
    def K(self) -> int:
        return self.eigenfunctions.shape[1]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.eigenfunctions = np.asarray(self.eigenfunctions, dtype=float)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        if self.mean.shape != (N_LAGS,):
            raise ValidationError("mean must have one entry per lag")
        if self.eigenfunctions.shape[0] != N_LAGS:
            raise ValidationError("eigenfunctions must be 10 x K")
        if self.eigenvalues.shape != (self.K,):
            raise ValidationError("eigenvalues must match K")
        gram = self.eigenfunctions.T @ self.eigenfunctions
        if not np.allclose(gram, np.eye(self.K), atol=ORTHO_TOL):
            raise ValidationError("eigenfunction columns are not orthonormal")
        if np.any(np.diff(self.eigenvalues) > 1e-12) or np.any(self.eigenvalues < -1e-12):
            raise ValidationError("eigenvalues must be nonincreasing and nonnegative")

    def explained_variance_ratio(self) -> np.ndarray:
        """Cumulative share of total variance captured by the first k factors."""
        if self.total_variance is None:
            raise ValidationError("total variance unavailable (deserialized model)")
        if self.total_variance == 0:
            return np.ones(self.K)
        return np.cumsum(self.eigenvalues) / self.total_variance

    def to_json(self) -> str:
        """Serialize with 17 significant digits (exact binary round-trip)."""
        def f(x):
            return format(float(x), ".17g")

        doc = {
            "mean": [f(v) for v in self.mean],
            "eigenfunctions": [[f(v) for v in self.eigenfunctions[:, k]] for k in range(self.K)],
            "eigenvalues": [f(v) for v in self.eigenvalues],
            "K": self.K,
            "n_train": self.n_train,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FpcaModel":
        doc = json.loads(text)
        eigenfunctions = np.array([[float(v) for v in col] for col in doc["eigenfunctions"]]).T
        model = cls(
            mean=np.array([float(v) for v in doc["mean"]]),
            eigenfunctions=eigenfunctions,
            eigenvalues=np.array([float(v) for v in doc["eigenvalues"]]),
            n_train=int(doc["n_train"]),
        )
        if model.K != int(doc["K"]):
            raise ValidationError("serialized K disagrees with eigenfunction count")
        return model


def _apply_sign_convention(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for k in range(out.shape[1]):
        j = int(np.argmax(np.abs(out[:, k])))
        if out[j, k] < 0:
            out[:, k] = -out[:, k]
    return out


def fit_fpca(curves, K: int) -> FpcaModel:
    """Fit mean and top-K eigenstructure of complete curves.

    Accepts a list of complete DevCurves or an (N, 10) array. The sample
    covariance uses denominator N - 1 and is symmetrized before the dense
    eigensolve.
    """
    Y = curves if isinstance(curves, np.ndarray) else curve_matrix(curves)
    N = Y.shape[0]
    if not 1 <= K <= N_LAGS:
        raise ValueError(f"K must lie in 1..{N_LAGS}")
    if N < 2:
        raise InsufficientDataError("FPCA needs at least 2 curves")
    if N < K:
        raise InsufficientDataError(f"K={K} exceeds training size {N}")
    mean = Y.mean(axis=0)
    cov = np.cov(Y, rowvar=False, ddof=1)
    cov = (cov + cov.T) / 2.0
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order][:K]
    evecs = _apply_sign_convention(evecs[:, order][:, :K])
    return FpcaModel(
        mean=mean,
        eigenfunctions=evecs,
        eigenvalues=evals,
        n_train=N,
        total_variance=float(np.trace(cov)),
    )


@dataclass
class ScoreMatrix:
    """Projection scores of training curves, one row per curve."""

    curve_ids: list[str]
    B: np.ndarray

    @property
    def K(self) -> int:
        return self.B.shape[1]


def scores(model: FpcaModel, curve) -> np.ndarray:
    """Score vector <y - mean, phi_k> of one complete curve."""
    y = curve.ilr if isinstance(curve, DevCurve) else np.asarray(curve, dtype=float)
    if y.shape != (N_LAGS,) or np.isnan(y).any():
        raise ValidationError("scores need a complete 10-lag curve")
    return model.eigenfunctions.T @ (y - model.mean)


def score_matrix(model: FpcaModel, curves: list[DevCurve]) -> ScoreMatrix:
    Y = curve_matrix(curves)
    return ScoreMatrix(
        curve_ids=[c.curve_id for c in curves],
        B=(Y - model.mean) @ model.eigenfunctions,
    )


def reconstruct(model: FpcaModel, beta) -> np.ndarray:
    """Curve mean(x) + sum_k phi_k(x) beta_k over all 10 lags."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.K,):
        raise ValueError(f"score vector must have length K={model.K}")
    return model.mean + model.eigenfunctions @ beta


def residual_matrix(model: FpcaModel, Y: np.ndarray) -> np.ndarray:
    """Per-curve residuals after removing the K-factor reconstruction."""
    centered = Y - model.mean
    return centered - (centered @ model.eigenfunctions) @ model.eigenfunctions.T
