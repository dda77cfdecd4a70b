"""Detector interface: acceptance scores, thresholds, and the decision rule.

Every detector reduces to the same contract: an acceptance score S(X) and a
threshold delta. A sample is rejected exactly when S(X) < delta, otherwise
it is labeled by the detector's closed-set head. The per-class-threshold
scorer folds its rule into this shape by scoring the maximum margin
max_k(sigmoid(z_k) - delta_k) against a fixed global threshold of zero.

Fitted detectors serialize to a single-file bundle: a text header (scalars
at full repr precision) followed by named OODF version-2 array blocks, so a
reloaded detector reproduces its scores bit-for-bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .data import _read_oodf, oodf_bytes
from .errors import DataError
from .mathops import sigmoid, softmax
from .nets import Network, forward
from .training import input_gradient, predict_in_batches

#: Decision sentinel for "none of the known classes".
REJECT = -1

METHOD_NAMES = (
    "tau-softmax",
    "tau-sigmoid",
    "doc",
    "odin",
    "openmax",
    "ocsvm",
    "mahalanobis",
)

BUNDLE_MAGIC = b"OSKB"


@dataclass(frozen=True)
class Batch:
    """Evaluation inputs; detectors pull the views they need.

    ``x`` carries standardized raw inputs (only the perturbation scorer
    needs them), ``features`` the penultimate activations, ``logits`` the
    classifier head outputs.
    """

    x: np.ndarray | None = None
    features: np.ndarray | None = None
    logits: np.ndarray | None = None

    def need(self, name: str) -> np.ndarray:
        v = getattr(self, name)
        if v is None:
            raise DataError(f"this detector needs batch.{name}")
        return v


def apply_decision_rule(
    scores: np.ndarray, predictions: np.ndarray, delta: float
) -> np.ndarray:
    """Accept iff score >= delta; rejected samples get the REJECT label."""
    scores = np.asarray(scores)
    predictions = np.asarray(predictions)
    return np.where(scores >= delta, predictions, REJECT)


def calibrate_threshold(scores: np.ndarray, tpr_target: float = 0.95) -> float:
    """Largest observed score accepting at least ``tpr_target`` of inputs.

    Returns the m-th largest score with m = ceil(tpr_target * n); any
    larger candidate would drop the empirical TPR below the target.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DataError("cannot calibrate a threshold on empty scores")
    if not np.all(np.isfinite(s)):
        raise DataError("calibration scores must be finite")
    if not (0.0 < tpr_target <= 1.0):
        raise DataError("tpr_target must be in (0, 1]")
    n = s.size
    # tolerate float fuzz in tpr*n (e.g. 0.95*100 -> 95.00000000000001)
    m = int(math.ceil(tpr_target * n - 1e-9))
    m = max(1, min(n, m))
    return float(np.sort(s)[::-1][m - 1])


# ----------------------------------------------------------- score funcs


def tau_softmax_score(logits: np.ndarray) -> np.ndarray:
    """Maximum softmax probability."""
    return softmax(np.asarray(logits)).max(axis=1)


def tau_sigmoid_score(logits: np.ndarray) -> np.ndarray:
    """Maximum per-class sigmoid activation."""
    return sigmoid(np.asarray(logits)).max(axis=1)


def fit_doc_thresholds(
    logits: np.ndarray,
    labels: np.ndarray,
    tpr_target: float = 0.95,
    min_count: int = 20,
) -> np.ndarray:
    """Per-class sigmoid thresholds delta_k from class-k positives."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    k = logits.shape[1]
    deltas = np.empty(k, dtype=np.float64)
    s = sigmoid(logits)
    for c in range(k):
        mask = labels == c
        if mask.sum() < min_count:
            raise DataError(
                f"class {c} has {int(mask.sum())} calibration samples, "
                f"fewer than {min_count}"
            )
        deltas[c] = calibrate_threshold(s[mask, c], tpr_target)
    return deltas


def doc_margins(logits: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Margins sigmoid(z_k) - delta_k; rejection means all are negative."""
    return sigmoid(np.asarray(logits)) - np.asarray(deltas)[None, :]


def odin_scores(
    net: Network,
    x: np.ndarray,
    temperature: float,
    epsilon: float,
    batch: int = 256,
) -> np.ndarray:
    """Input-perturbation scoring: two forward passes plus one backward.

    x_tilde = x - epsilon * sign(-grad log max softmax(logits/T)); the
    score is the max temperature-scaled softmax at x_tilde. epsilon == 0
    skips the perturbation entirely, reducing to temperature-scaled
    max-softmax on the original input.
    """
    if epsilon == 0.0:
        _, logits = predict_in_batches(net, x, batch)
        return tau_softmax_score(logits / temperature)
    out = []
    for i in range(0, x.shape[0], batch):
        xb = x[i : i + batch]
        g = input_gradient(net, xb, temperature)
        x_tilde = xb + epsilon * np.sign(g)
        _, logits = forward(net, x_tilde)
        out.append(tau_softmax_score(logits / temperature))
    return np.concatenate(out)


# -------------------------------------------------------------- bundles


def save_bundle(
    path, method: str, header: dict[str, str], arrays: dict[str, np.ndarray]
) -> None:
    if method not in METHOD_NAMES:
        raise DataError(f"unknown method {method!r}")
    lines = ["oskit-detector-bundle 1", f"method {method}"]
    for key, val in header.items():
        if "\n" in key or "\n" in str(val):
            raise DataError("header entries must be single-line")
        lines.append(f"{key} {val}")
    lines.append("arrays " + (" ".join(arrays) if arrays else "-"))
    text = "\n".join(lines) + "\n\n"
    with open(path, "wb") as f:
        f.write(BUNDLE_MAGIC)
        f.write(text.encode("utf-8"))
        for name, arr in arrays.items():
            blob = oodf_bytes(np.asarray(arr, dtype=np.float64), version=2)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)


def load_bundle(path) -> tuple[str, dict[str, str], dict[str, np.ndarray]]:
    try:
        raw = open(path, "rb").read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if not raw.startswith(BUNDLE_MAGIC):
        raise DataError(f"{path}: not a detector bundle")
    sep = raw.find(b"\n\n", 4)
    if sep < 0:
        raise DataError(f"{path}: unterminated bundle header")
    lines = raw[4:sep].decode("utf-8").splitlines()
    if not lines or lines[0] != "oskit-detector-bundle 1":
        raise DataError(f"{path}: bad bundle version line")
    header: dict[str, str] = {}
    for ln in lines[1:]:
        key, _, val = ln.partition(" ")
        header[key] = val
    method = header.pop("method", None)
    if method not in METHOD_NAMES:
        raise DataError(f"{path}: unknown method {method!r}")
    names = header.pop("arrays", "-").split()
    arrays: dict[str, np.ndarray] = {}
    pos = sep + 2
    for name in names if names != ["-"] else []:
        if pos + 4 > len(raw):
            raise DataError(f"{path}: truncated bundle arrays")
        (blen,) = struct.unpack("<I", raw[pos : pos + 4])
        pos += 4
        values, _ = _read_oodf(raw[pos : pos + blen])
        arrays[name] = values
        pos += blen
    if pos != len(raw):
        raise DataError(f"{path}: trailing bytes in bundle")
    return method, header, arrays


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split()], dtype=np.float64)


def _fmt_floats(arr) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr).ravel())


# -------------------------------------------------------- head detectors


class TauSoftmax:
    """Threshold on the maximum softmax probability."""

    method = "tau-softmax"

    def __init__(self, delta: float):
        self.delta = float(delta)

    def score(self, batch: Batch) -> np.ndarray:
        return tau_softmax_score(batch.need("logits"))

    def predict(self, batch: Batch) -> np.ndarray:
        return np.asarray(batch.need("logits")).argmax(axis=1)

    def decide(self, batch: Batch) -> np.ndarray:
        return apply_decision_rule(self.score(batch), self.predict(batch), self.delta)

    def to_bundle(self, path) -> None:
        save_bundle(path, self.method, {"delta": repr(self.delta)}, {})

    @classmethod
    def from_state(cls, header, arrays):
        return cls(delta=float(header["delta"]))


class TauSigmoid(TauSoftmax):
    """Threshold on the maximum sigmoid activation."""

    method = "tau-sigmoid"

    def score(self, batch: Batch) -> np.ndarray:
        return tau_sigmoid_score(batch.need("logits"))


class Doc:
    """Per-class sigmoid thresholds; reject iff every margin is negative."""

    method = "doc"
    delta = 0.0  # margins are compared against zero by construction

    def __init__(self, deltas: np.ndarray):
        self.deltas = np.asarray(deltas, dtype=np.float64)

    def score(self, batch: Batch) -> np.ndarray:
        return doc_margins(batch.need("logits"), self.deltas).max(axis=1)

    def predict(self, batch: Batch) -> np.ndarray:
        return doc_margins(batch.need("logits"), self.deltas).argmax(axis=1)

    def decide(self, batch: Batch) -> np.ndarray:
        return apply_decision_rule(self.score(batch), self.predict(batch), self.delta)

    def to_bundle(self, path) -> None:
        save_bundle(path, self.method, {"deltas": _fmt_floats(self.deltas)}, {})

    @classmethod
    def from_state(cls, header, arrays):
        return cls(deltas=_floats(header["deltas"]))


class Odin:
    """Temperature scaling plus adversarial-style input preprocessing."""

    method = "odin"

    def __init__(self, temperature: float, epsilon: float, delta: float, net: Network | None = None):
        if temperature <= 0:
            raise DataError("temperature must be positive")
        if epsilon < 0:
            raise DataError("epsilon must be non-negative")
        self.temperature = float(temperature)
        self.epsilon = float(epsilon)
        self.delta = float(delta)
        self.net = net

    def attach(self, net: Network) -> "Odin":
        self.net = net
        return self

    def score(self, batch: Batch) -> np.ndarray:
        if batch.x is not None and self.net is not None:
            return odin_scores(self.net, batch.x, self.temperature, self.epsilon)
        # grid/feature mode: no raw inputs to perturb; temperature only
        return tau_softmax_score(np.asarray(batch.need("logits")) / self.temperature)

    def predict(self, batch: Batch) -> np.ndarray:
        if batch.logits is not None:
            return np.asarray(batch.logits).argmax(axis=1)
        if self.net is None:
            raise DataError("odin needs logits or an attached network")
        _, logits = predict_in_batches(self.net, batch.need("x"))
        return logits.argmax(axis=1)

    def decide(self, batch: Batch) -> np.ndarray:
        return apply_decision_rule(self.score(batch), self.predict(batch), self.delta)

    def to_bundle(self, path) -> None:
        save_bundle(
            path,
            self.method,
            {
                "delta": repr(self.delta),
                "temperature": repr(self.temperature),
                "epsilon": repr(self.epsilon),
            },
            {},
        )

    @classmethod
    def from_state(cls, header, arrays):
        return cls(
            temperature=float(header["temperature"]),
            epsilon=float(header["epsilon"]),
            delta=float(header["delta"]),
        )
