"""Uniform detector construction with held-out threshold calibration.

``fit_detector`` takes in-distribution validation artifacts (features,
logits, labels, optionally raw inputs plus a network), splits the rows
80/20 into a fit part and a calibration part, fits whatever state the
method needs on the fit part, and calibrates the acceptance threshold on
the calibration part at the requested TPR. Methods without fitted state
still calibrate only on the 20% split so every threshold comes from rows
the detector never saw.
"""

from __future__ import annotations

import numpy as np

from .detectors import (
    Batch,
    Doc,
    Odin,
    TauSigmoid,
    TauSoftmax,
    calibrate_threshold,
    fit_doc_thresholds,
    load_bundle,
    odin_scores,
    tau_sigmoid_score,
    tau_softmax_score,
)
from .errors import ConfigError, DataError
from .mahalanobis import Mahalanobis
from .nets import Network
from .ocsvm import OneClassSvm
from .openmax import OpenMax
from .rng import rng_for

DETECTOR_CLASSES = {
    cls.method: cls
    for cls in (TauSoftmax, TauSigmoid, Doc, Odin, OpenMax, OneClassSvm, Mahalanobis)
}


def load_detector(path, net: Network | None = None):
    """Rebuild any fitted detector from its bundle file."""
    method, header, arrays = load_bundle(path)
    det = DETECTOR_CLASSES[method].from_state(header, arrays)
    if method == "odin" and net is not None:
        det.attach(net)
    return det


def calibration_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 row split: (fit indices, calibration indices)."""
    if n < 2:
        raise DataError("need at least 2 rows to split off a calibration part")
    perm = rng_for(seed, "detector-split").permutation(n)
    n_cal = max(1, int(round(0.2 * n)))
    return np.sort(perm[n_cal:]), np.sort(perm[:n_cal])


def _require(value, what: str, method: str):
    if value is None:
        raise ConfigError(f"{method} requires {what}")
    return value


def fit_detector(
    method: str,
    *,
    logits: np.ndarray | None = None,
    features: np.ndarray | None = None,
    labels: np.ndarray | None = None,
    x: np.ndarray | None = None,
    net: Network | None = None,
    seed: int = 0,
    tpr_target: float = 0.95,
    params: dict | None = None,
):
    """Fit one detector and calibrate its threshold on held-out rows."""
    if method not in DETECTOR_CLASSES:
        raise ConfigError(f"unknown detector method {method!r}")
    params = dict(params or {})
    n = None
    for arr in (logits, features, labels, x):
        if arr is not None:
            if n is not None and len(arr) != n:
                raise DataError("detector inputs must be row-aligned")
            n = len(arr)
    if n is None:
        raise ConfigError(f"{method} received no input artifacts")
    fit_idx, cal_idx = calibration_split(n, seed)

    if method == "tau-softmax":
        _reject_unknown(params, method)
        z = np.asarray(_require(logits, "logits", method))
        return TauSoftmax(calibrate_threshold(tau_softmax_score(z[cal_idx]), tpr_target))

    if method == "tau-sigmoid":
        _reject_unknown(params, method)
        z = np.asarray(_require(logits, "logits", method))
        return TauSigmoid(calibrate_threshold(tau_sigmoid_score(z[cal_idx]), tpr_target))

    if method == "doc":
        _reject_unknown(params, method)
        z = _require(logits, "logits", method)
        y = _require(labels, "labels", method)
        return Doc(fit_doc_thresholds(np.asarray(z)[cal_idx], np.asarray(y)[cal_idx], tpr_target))

    if method == "odin":
        temperature = float(params.pop("temperature", 1.0))
        epsilon = float(params.pop("epsilon", 0.0))
        _reject_unknown(params, method)
        if epsilon > 0:
            xv = np.asarray(_require(x, "raw inputs (epsilon > 0)", method))
            the_net = _require(net, "a network checkpoint", method)
            scores = odin_scores(the_net, xv[cal_idx], temperature, epsilon)
        else:
            z = _require(logits, "logits", method)
            scores = tau_softmax_score(np.asarray(z)[cal_idx] / temperature)
        det = Odin(temperature, epsilon, calibrate_threshold(scores, tpr_target))
        return det.attach(net) if net is not None else det

    if method == "openmax":
        z = np.asarray(_require(logits, "logits", method), dtype=np.float64)
        y = _require(labels, "labels", method)
        tail = int(params.pop("tail", 20))
        alpha = params.pop("alpha", None)
        alpha = None if alpha is None else int(alpha)
        _reject_unknown(params, method)
        model = OpenMax.fit(z[fit_idx], np.asarray(y)[fit_idx], tail=tail, alpha=alpha)
        cal_scores = model.score(Batch(logits=z[cal_idx]))
        model.delta = calibrate_threshold(cal_scores, tpr_target)
        return model

    if method == "ocsvm":
        f = np.asarray(_require(features, "features", method), dtype=np.float64)
        nu = float(params.pop("nu", 0.05))
        gamma = params.pop("gamma", None)
        gamma = None if gamma is None else float(gamma)
        tol = float(params.pop("tol", 1e-6))
        _reject_unknown(params, method)
        model = OneClassSvm.fit(f[fit_idx], nu=nu, gamma=gamma, tol=tol)
        model.delta = calibrate_threshold(model.decision(f[cal_idx]), tpr_target)
        return model

    if method == "mahalanobis":
        f = np.asarray(_require(features, "features", method), dtype=np.float64)
        y = _require(labels, "labels", method)
        _reject_unknown(params, method)
        model = Mahalanobis.fit(f[fit_idx], np.asarray(y)[fit_idx])
        model.delta = calibrate_threshold(model.score_features(f[cal_idx]), tpr_target)
        return model

    raise ConfigError(f"unknown detector method {method!r}")


def _reject_unknown(params: dict, method: str) -> None:
    if params:
        names = ", ".join(sorted(params))
        raise ConfigError(f"unknown {method} parameters: {names}")
