"""One-class SVM with an RBF kernel, trained by pairwise dual updates.

Solves min ½ αᵀQα over the simplex slice {0 ≤ α_i ≤ 1/(νn), Σα = 1} with
Q_ij = exp(−γ‖x_i − x_j‖²). Each step picks the maximal-KKT-violating
pair and transfers mass between them; the run converges when no pair
violates by more than tol. The decision value Σ α_i k(z, x_i) − ρ is the
acceptance score: points with negative values fall outside the learned
support region, and ν upper-bounds their training fraction.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .detectors import (
    Batch,
    _floats,
    _fmt_floats,
    apply_decision_rule,
    load_bundle,
    save_bundle,
)
from .errors import DataError, NumericError

MAX_PAIR_UPDATES = 1_000_000


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(−γ‖a_i − b_j‖²) for all pairs, shape [len(a), len(b)]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def default_gamma(features: np.ndarray) -> float:
    """1/(d · mean per-dimension variance) of the fit features."""
    z = np.asarray(features, dtype=np.float64)
    v = float(z.var(axis=0).mean())
    if v == 0.0:
        raise DataError("features are degenerate (zero variance)")
    return 1.0 / (z.shape[1] * v)


class _KernelRows:
    """On-demand kernel rows with an LRU byte budget."""

    def __init__(self, x: np.ndarray, gamma: float, budget_mb: float = 256.0):
        self.x = x
        self.gamma = gamma
        self.cap = max(8, int(budget_mb * 1e6 / (8 * x.shape[0])))
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        cached = self.rows.get(i)
        if cached is not None:
            self.rows.move_to_end(i)
            return cached
        r = rbf_kernel(self.x[i : i + 1], self.x, self.gamma)[0]
        self.rows[i] = r
        if len(self.rows) > self.cap:
            self.rows.popitem(last=False)
        return r


class OneClassSvm:
    """Fitted one-class SVM: support vectors, dual weights, and offset."""

    method = "ocsvm"

    def __init__(
        self,
        support_vectors: np.ndarray,
        alphas: np.ndarray,
        rho: float,
        gamma: float,
        nu: float,
        delta: float = 0.0,
    ):
        self.support_vectors = np.asarray(support_vectors, dtype=np.float64)
        self.alphas = np.asarray(alphas, dtype=np.float64)
        if self.support_vectors.shape[0] != self.alphas.shape[0]:
            raise DataError("one dual weight per support vector required")
        self.rho = float(rho)
        self.gamma = float(gamma)
        self.nu = float(nu)
        self.delta = float(delta)
        # fit diagnostics; absent on models loaded from a bundle
        self.updates = 0
        self.objective_trace: list[float] = []
        self.dual_objective: float | None = None

    @classmethod
    def fit(
        cls,
        features: np.ndarray,
        nu: float = 0.05,
        gamma: float | None = None,
        tol: float = 1e-6,
        delta: float = 0.0,
        cache_mb: float = 256.0,
    ) -> "OneClassSvm":
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 10:
            raise DataError("one-class fit needs at least 10 feature rows")
        if not (0.0 < nu <= 1.0):
            raise DataError("nu must be in (0, 1]")
        if np.all(x == x[0]):
            raise DataError("features are degenerate (all rows identical)")
        if gamma is None:
            gamma = default_gamma(x)
        if gamma <= 0:
            raise DataError("gamma must be positive")

        n = x.shape[0]
        c = 1.0 / (nu * n)
        kernel = _KernelRows(x, gamma, cache_mb)

        # feasible start: fill the box from the front, fractional remainder
        alpha = np.zeros(n)
        full = int(np.floor(nu * n))
        alpha[:full] = c
        if full < n:
            # remainder can round to a hair below zero when nu*n is integral
            alpha[full] = max(0.0, 1.0 - full * c)

        g = np.zeros(n)
        for i in np.flatnonzero(alpha > 0):
            g += alpha[i] * kernel.row(i)

        objective = 0.5 * float(alpha @ g)
        trace = [objective]
        updates = 0
        while True:
            up = alpha > 0.0
            down = alpha < c
            if not up.any() or not down.any():
                break
            gi_masked = np.where(up, g, -np.inf)
            gj_masked = np.where(down, g, np.inf)
            i = int(gi_masked.argmax())
            j = int(gj_masked.argmin())
            violation = g[i] - g[j]
            if violation <= tol:
                break
            if updates >= MAX_PAIR_UPDATES:
                raise NumericError(
                    f"dual solver did not converge within {MAX_PAIR_UPDATES} updates"
                )
            row_i = kernel.row(i)
            row_j = kernel.row(j)
            curvature = max(row_i[i] + row_j[j] - 2.0 * row_i[j], 1e-12)
            step = min(violation / curvature, alpha[i], c - alpha[j])
            change = 0.5 * step * step * curvature - step * violation
            if change > 1e-12 * max(1.0, abs(objective)):
                raise NumericError("dual objective increased during a pair update")
            objective += change
            # land exactly on the box when a bound is the binding limit
            alpha[i] = 0.0 if step == alpha[i] else alpha[i] - step
            alpha[j] = c if step == c - alpha[j] else alpha[j] + step
            g += step * (row_j - row_i)
            updates += 1
            if updates % 256 == 0:
                trace.append(objective)
        trace.append(objective)

        sv_mask = alpha > 0.0
        sv = x[sv_mask]
        sv_alpha = alpha[sv_mask]
        # fresh kernel sums over support vectors (incremental g has drift)
        g_sv = rbf_kernel(sv, sv, gamma) @ sv_alpha
        on_margin = sv_alpha < c
        if on_margin.any():
            rho = float(g_sv[on_margin].mean())
        else:
            # every weight at the box: pick the smallest offset that puts
            # all bound points on or outside the boundary
            rho = float(g_sv.max())

        model = cls(sv, sv_alpha, rho, gamma, nu, delta)
        model.updates = updates
        model.objective_trace = trace
        model.dual_objective = 0.5 * float(sv_alpha @ g_sv)
        return model

    def decision(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.support_vectors.shape[1]:
            raise DataError("feature width does not match the fitted model")
        return rbf_kernel(z, self.support_vectors, self.gamma) @ self.alphas - self.rho

    def score(self, batch: Batch) -> np.ndarray:
        return self.decision(batch.need("features"))

    def predict(self, batch: Batch) -> np.ndarray:
        # no class structure of its own; closed-set labels come from the head
        return np.asarray(batch.need("logits")).argmax(axis=1)

    def decide(self, batch: Batch) -> np.ndarray:
        return apply_decision_rule(self.score(batch), self.predict(batch), self.delta)

    def to_bundle(self, path) -> None:
        header = {
            "delta": repr(self.delta),
            "rho": repr(self.rho),
            "gamma": repr(self.gamma),
            "nu": repr(self.nu),
            "alphas": _fmt_floats(self.alphas),
        }
        save_bundle(
            path, self.method, header, {"support_vectors": self.support_vectors}
        )

    @classmethod
    def from_state(cls, header: dict[str, str], arrays: dict[str, np.ndarray]):
        return cls(
            support_vectors=arrays["support_vectors"],
            alphas=_floats(header["alphas"]),
            rho=float(header["rho"]),
            gamma=float(header["gamma"]),
            nu=float(header["nu"]),
            delta=float(header["delta"]),
        )

    @classmethod
    def from_bundle(cls, path) -> "OneClassSvm":
        method, header, arrays = load_bundle(path)
        if method != cls.method:
            raise DataError(f"{path}: bundle holds {method!r}, not ocsvm")
        return cls.from_state(header, arrays)
