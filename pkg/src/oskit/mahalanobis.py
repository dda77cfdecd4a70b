"""Class-conditional Gaussian scoring with a tied covariance.

The model is a Gaussian discriminant fit on final-layer features: per-class
means plus one pooled population covariance. The acceptance score is the
negated squared Mahalanobis distance to the nearest class mean, evaluated
through the Cholesky factor of the regularized covariance (two triangular
solves per class; the inverse is never formed).
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .detectors import (
    Batch,
    apply_decision_rule,
    load_bundle,
    save_bundle,
)
from .errors import DataError, NumericError

#: Relative and absolute floors for the covariance regularizer. The
#: relative form vanishes when the pooled covariance is exactly zero
#: (every class a single repeated point), so an absolute floor keeps the
#: regularized matrix positive definite in that degenerate case.
REL_RIDGE = 1e-6
ABS_RIDGE = 1e-12


def _regularized_cholesky(cov: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    d = cov.shape[0]
    for _ in range(11):
        try:
            factor = cholesky(cov + lam * np.eye(d), lower=True, check_finite=False)
            return factor, lam
        except LinAlgError:
            lam *= 2.0
    raise NumericError("covariance not positive definite after max regularization")


class Mahalanobis:
    """Tied-covariance Gaussian model over K known classes."""

    method = "mahalanobis"

    def __init__(
        self,
        means: np.ndarray,
        cov: np.ndarray,
        lam: float,
        delta: float = 0.0,
    ):
        self.means = np.asarray(means, dtype=np.float64)
        self.cov = np.asarray(cov, dtype=np.float64)
        if self.means.ndim != 2 or self.cov.shape != (self.means.shape[1],) * 2:
            raise DataError("means must be [K, d] and covariance [d, d]")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise DataError("covariance must be symmetric")
        self.lam = float(lam)
        self.delta = float(delta)
        self.factor, self.lam = _regularized_cholesky(self.cov, self.lam)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @classmethod
    def fit(
        cls, features: np.ndarray, labels: np.ndarray, delta: float = 0.0
    ) -> "Mahalanobis":
        z = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels)
        if z.ndim != 2:
            raise DataError("features must be [n, d]")
        n, d = z.shape
        if n <= d:
            warnings.warn(
                f"fitting a {d}-dimensional covariance from only {n} samples",
                stacklevel=2,
            )
        classes = np.unique(labels)
        if classes.size < 1 or classes.min() != 0 or classes.max() != classes.size - 1:
            raise DataError("labels must cover 0..K-1")
        k = classes.size
        means = np.empty((k, d))
        centered = np.empty_like(z)
        for c in range(k):
            mask = labels == c
            if mask.sum() < 2:
                raise DataError(f"class {c} has fewer than 2 samples")
            means[c] = z[mask].mean(axis=0)
            centered[mask] = z[mask] - means[c]
        cov = centered.T @ centered / n
        cov = (cov + cov.T) / 2.0
        lam = max(REL_RIDGE * np.trace(cov) / d, ABS_RIDGE)
        return cls(means, cov, lam, delta)

    def squared_distances(self, z: np.ndarray) -> np.ndarray:
        """Quadratic form to every class mean, shape [n, K]."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.means.shape[1]:
            raise DataError("feature width does not match the fitted model")
        out = np.empty((z.shape[0], self.num_classes))
        for c in range(self.num_classes):
            diff = (z - self.means[c]).T
            y = solve_triangular(self.factor, diff, lower=True, check_finite=False)
            out[:, c] = np.einsum("ij,ij->j", y, y)
        return out

    def score_features(self, z: np.ndarray) -> np.ndarray:
        return -self.squared_distances(z).min(axis=1)

    def classify(self, z: np.ndarray) -> np.ndarray:
        # argmin takes the lowest class index on exact ties
        return self.squared_distances(z).argmin(axis=1)

    def score(self, batch: Batch) -> np.ndarray:
        return self.score_features(batch.need("features"))

    def predict(self, batch: Batch) -> np.ndarray:
        return self.classify(batch.need("features"))

    def decide(self, batch: Batch) -> np.ndarray:
        return apply_decision_rule(self.score(batch), self.predict(batch), self.delta)

    def to_bundle(self, path) -> None:
        header = {"delta": repr(self.delta), "lambda_r": repr(self.lam)}
        save_bundle(
            path, self.method, header, {"means": self.means, "cov": self.cov}
        )

    @classmethod
    def from_state(cls, header: dict[str, str], arrays: dict[str, np.ndarray]):
        return cls(
            means=arrays["means"],
            cov=arrays["cov"],
            lam=float(header["lambda_r"]),
            delta=float(header["delta"]),
        )

    @classmethod
    def from_bundle(cls, path) -> "Mahalanobis":
        method, header, arrays = load_bundle(path)
        if method != cls.method:
            raise DataError(f"{path}: bundle holds {method!r}, not mahalanobis")
        return cls.from_state(header, arrays)
