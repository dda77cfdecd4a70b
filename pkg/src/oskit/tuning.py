"""Hyperparameter selection against Gaussian-noise outliers.

Each tunable method walks a small fixed grid and keeps the candidate with
the highest AUROC separating held-out in-distribution scores from scores
on noise inputs. The full grid is recorded alongside the winner so runs
can be audited. Ties go to the earliest grid point, which keeps the
selection deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detectors import odin_scores
from .errors import DataError
from .metrics import auroc
from .nets import Network
from .ocsvm import OneClassSvm, default_gamma
from .openmax import OpenMax

ODIN_TEMPERATURES = (1.0, 10.0, 100.0, 1000.0)
ODIN_EPSILONS = (0.0, 0.0005, 0.001, 0.002, 0.004)
OPENMAX_TAILS = (10, 20, 50)
OPENMAX_ALPHAS = (1, 2, 3, 5)
OCSVM_NUS = (0.01, 0.05, 0.1)
OCSVM_GAMMA_SCALES = (0.1, 1.0, 10.0)


@dataclass
class TuneResult:
    params: dict
    auroc: float
    records: list[dict] = field(default_factory=list)


def _select(records: list[dict]) -> TuneResult:
    scored = [r for r in records if np.isfinite(r["auroc"])]
    if not scored:
        raise DataError("no feasible grid candidate")
    best = max(scored, key=lambda r: r["auroc"])
    params = {k: v for k, v in best.items() if k != "auroc"}
    return TuneResult(params=params, auroc=best["auroc"], records=records)


def tune_odin(
    net: Network,
    x_in: np.ndarray,
    x_noise: np.ndarray,
    temperatures=ODIN_TEMPERATURES,
    epsilons=ODIN_EPSILONS,
) -> TuneResult:
    if not temperatures or not epsilons:
        raise DataError("empty tuning grid")
    records = []
    for t in temperatures:
        for eps in epsilons:
            s_in = odin_scores(net, x_in, t, eps)
            s_out = odin_scores(net, x_noise, t, eps)
            records.append(
                {"temperature": t, "epsilon": eps, "auroc": auroc(s_in, s_out)}
            )
    return _select(records)


def tune_openmax(
    fit_logits: np.ndarray,
    fit_labels: np.ndarray,
    val_logits: np.ndarray,
    noise_logits: np.ndarray,
    tails=OPENMAX_TAILS,
    alphas=OPENMAX_ALPHAS,
) -> TuneResult:
    if not tails or not alphas:
        raise DataError("empty tuning grid")
    k = np.asarray(fit_logits).shape[1]
    usable_alphas = [a for a in alphas if a <= k]
    if not usable_alphas:
        raise DataError("every alpha candidate exceeds the class count")
    records = []
    for tail in tails:
        try:
            base = OpenMax.fit(fit_logits, fit_labels, tail=tail, alpha=usable_alphas[0])
        except DataError:
            # tail larger than some class's correct count: infeasible here
            for a in usable_alphas:
                records.append({"tail": tail, "alpha": a, "auroc": float("nan")})
            continue
        for a in usable_alphas:
            model = OpenMax(base.mavs, base.shapes, base.scales, tail, a, 0.0)
            s_in = model.recalibrate(val_logits)[:, :k].max(axis=1)
            s_out = model.recalibrate(noise_logits)[:, :k].max(axis=1)
            records.append({"tail": tail, "alpha": a, "auroc": auroc(s_in, s_out)})
    return _select(records)


def tune_ocsvm(
    fit_features: np.ndarray,
    val_features: np.ndarray,
    noise_features: np.ndarray,
    nus=OCSVM_NUS,
    gamma_scales=OCSVM_GAMMA_SCALES,
) -> TuneResult:
    if not nus or not gamma_scales:
        raise DataError("empty tuning grid")
    base_gamma = default_gamma(fit_features)
    records = []
    for nu in nus:
        for scale in gamma_scales:
            gamma = scale * base_gamma
            model = OneClassSvm.fit(fit_features, nu=nu, gamma=gamma)
            s_in = model.decision(val_features)
            s_out = model.decision(noise_features)
            records.append({"nu": nu, "gamma": gamma, "auroc": auroc(s_in, s_out)})
    return _select(records)
