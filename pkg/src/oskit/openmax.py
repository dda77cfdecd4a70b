"""Extreme-value recalibration of classifier activations.

Per class, the tail of distances between correctly classified training
activations and the class mean activation vector (MAV) is fit with a
Weibull distribution. At test time the Weibull CDF of a sample's distance
to each of its top-ranked classes attenuates those activations; the
removed mass becomes an explicit rejection activation, and a softmax over
the K+1 recalibrated activations yields open-set probabilities.

Activations here are the classifier logits. Distances are Euclidean.
"""

from __future__ import annotations

import numpy as np

from .detectors import (
    Batch,
    REJECT,
    _floats,
    _fmt_floats,
    load_bundle,
    save_bundle,
)
from .errors import DataError, NumericError
from .mathops import softmax

# pi / sqrt(6): moment estimate of the shape from the log-sample spread
_LOG_MOMENT = 1.2825498301618641


def weibull_fit_mle(
    samples: np.ndarray, max_iter: int = 200, tol: float = 1e-9
) -> tuple[float, float]:
    """Maximum-likelihood (shape, scale) via Newton on the profile equation.

    The scale is eliminated analytically; Newton runs on the shape alone
    with a log-moment initial guess, and must move less than ``tol``
    between iterates to count as converged.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 5:
        raise DataError("Weibull fit needs at least 5 samples")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise DataError("Weibull samples must be positive and finite")
    if np.all(x == x[0]):
        raise DataError("Weibull samples are degenerate (all equal)")
    a = np.log(x)
    a_mean = a.mean()
    kappa = _LOG_MOMENT / a.std()

    def weighted_moments(k: float) -> tuple[float, float, float]:
        # moments of log-samples under weights x^k, computed shift-safe
        t = k * a
        m = t.max()
        w = np.exp(t - m)
        sw = w.sum()
        r1 = float(w @ a) / sw
        r2 = float(w @ (a * a)) / sw
        return m, r1, r2

    for _ in range(max_iter):
        m, r1, r2 = weighted_moments(kappa)
        f = r1 - 1.0 / kappa - a_mean
        fprime = (r2 - r1 * r1) + 1.0 / kappa**2
        new = kappa - f / fprime
        if new <= 0:
            new = kappa / 2.0
        moved = abs(new - kappa)
        kappa = new
        if moved < tol:
            t = kappa * a
            m = t.max()
            w = np.exp(t - m)
            scale = float(np.exp((m + np.log(w.mean())) / kappa))
            return float(kappa), scale
    raise NumericError("Weibull shape iteration did not converge")


def weibull_cdf(x, shape, scale):
    """P(X <= x) for Weibull(shape, scale); zero at and below the origin."""
    x = np.asarray(x, dtype=np.float64)
    pos = x > 0
    z = np.where(pos, x, 1.0)
    out = -np.expm1(-((z / scale) ** shape))
    return np.where(pos, out, 0.0)


def fit_mavs(
    activations: np.ndarray, logits: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Per-class mean activation over correctly classified samples only."""
    activations = np.asarray(activations, dtype=np.float64)
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    k = logits.shape[1]
    correct = logits.argmax(axis=1) == labels
    mavs = np.empty((k, activations.shape[1]), dtype=np.float64)
    for c in range(k):
        mask = correct & (labels == c)
        if not mask.any():
            raise DataError(f"class {c} has no correctly classified samples")
        mavs[c] = activations[mask].mean(axis=0)
    return mavs


def openmax_decide(probs: np.ndarray, delta: float) -> np.ndarray:
    """REJECT when the rejection class wins outright or the top known
    probability falls below delta; ties at delta are accepted."""
    probs = np.asarray(probs)
    k = probs.shape[1] - 1
    known = probs[:, :k]
    score = known.max(axis=1)
    rejected = (probs.argmax(axis=1) == k) | (score < delta)
    return np.where(rejected, REJECT, known.argmax(axis=1))


class OpenMax:
    """Fitted EVT recalibration model over K known classes."""

    method = "openmax"

    def __init__(
        self,
        mavs: np.ndarray,
        shapes: np.ndarray,
        scales: np.ndarray,
        tail: int,
        alpha: int,
        delta: float,
    ):
        self.mavs = np.asarray(mavs, dtype=np.float64)
        self.shapes = np.asarray(shapes, dtype=np.float64)
        self.scales = np.asarray(scales, dtype=np.float64)
        self.tail = int(tail)
        self.alpha = int(alpha)
        self.delta = float(delta)
        k = self.mavs.shape[0]
        if not (1 <= self.alpha <= k):
            raise DataError(f"alpha must be in 1..{k}")
        if self.shapes.shape != (k,) or self.scales.shape != (k,):
            raise DataError("per-class Weibull parameter count mismatch")

    @property
    def num_classes(self) -> int:
        return self.mavs.shape[0]

    @classmethod
    def fit(
        cls,
        logits: np.ndarray,
        labels: np.ndarray,
        tail: int = 20,
        alpha: int | None = None,
        delta: float = 0.0,
    ) -> "OpenMax":
        logits = np.asarray(logits, dtype=np.float64)
        labels = np.asarray(labels)
        k = logits.shape[1]
        if tail < 5:
            raise DataError("tail size must be at least 5")
        if alpha is None:
            alpha = min(3, k)
        mavs = fit_mavs(logits, logits, labels)
        correct = logits.argmax(axis=1) == labels
        shapes = np.empty(k)
        scales = np.empty(k)
        for c in range(k):
            rows = logits[correct & (labels == c)]
            if rows.shape[0] < tail:
                raise DataError(
                    f"class {c} has {rows.shape[0]} correctly classified "
                    f"samples, fewer than the tail size {tail}"
                )
            dist = np.linalg.norm(rows - mavs[c], axis=1)
            largest = np.sort(dist)[-tail:]
            try:
                shapes[c], scales[c] = weibull_fit_mle(largest)
            except DataError as e:
                raise DataError(f"class {c}: {e}") from e
        return cls(mavs, shapes, scales, tail, alpha, delta)

    def recalibrate(self, activations: np.ndarray) -> np.ndarray:
        """Map [n, K] activations to [n, K+1] open-set probabilities."""
        v = np.asarray(activations, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.num_classes:
            raise DataError("activation width does not match the fitted model")
        n, k = v.shape
        dist = np.linalg.norm(v[:, None, :] - self.mavs[None, :, :], axis=2)
        cdf = weibull_cdf(dist, self.shapes[None, :], self.scales[None, :])
        order = np.argsort(-v, axis=1, kind="stable")
        w = np.ones((n, k))
        rows = np.arange(n)
        for j in range(self.alpha):
            cls_idx = order[:, j]
            damping = (self.alpha - j) / self.alpha
            w[rows, cls_idx] = 1.0 - damping * cdf[rows, cls_idx]
        v_hat = v * w
        rejection = np.sum(v * (1.0 - w), axis=1)
        return softmax(np.concatenate([v_hat, rejection[:, None]], axis=1))

    def score(self, batch: Batch) -> np.ndarray:
        probs = self.recalibrate(batch.need("logits"))
        return probs[:, : self.num_classes].max(axis=1)

    def predict(self, batch: Batch) -> np.ndarray:
        probs = self.recalibrate(batch.need("logits"))
        return probs[:, : self.num_classes].argmax(axis=1)

    def decide(self, batch: Batch) -> np.ndarray:
        return openmax_decide(self.recalibrate(batch.need("logits")), self.delta)

    def to_bundle(self, path) -> None:
        header = {
            "delta": repr(self.delta),
            "alpha": str(self.alpha),
            "tail": str(self.tail),
            "shapes": _fmt_floats(self.shapes),
            "scales": _fmt_floats(self.scales),
        }
        save_bundle(path, self.method, header, {"mavs": self.mavs})

    @classmethod
    def from_state(cls, header: dict[str, str], arrays: dict[str, np.ndarray]):
        return cls(
            mavs=arrays["mavs"],
            shapes=_floats(header["shapes"]),
            scales=_floats(header["scales"]),
            tail=int(header["tail"]),
            alpha=int(header["alpha"]),
            delta=float(header["delta"]),
        )

    @classmethod
    def from_bundle(cls, path) -> "OpenMax":
        method, header, arrays = load_bundle(path)
        if method != cls.method:
            raise DataError(f"{path}: bundle holds {method!r}, not openmax")
        return cls.from_state(header, arrays)
