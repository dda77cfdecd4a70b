"""Threshold-free evaluation metrics for open-set scoring.

AUROC is computed as the Mann-Whitney statistic via midranks, paired AUROC
differences are tested with DeLong's method on structural components, and
the open-set classification (OSC) curve trades correct classification rate
against false positive rate across every score threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm


def _check_scores(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite (NaN/inf found)")
    return a


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based midranks of ``x``; tied values share the average rank."""
    x = np.asarray(x, dtype=np.float64)
    sx = np.sort(x, kind="mergesort")
    lo = np.searchsorted(sx, x, side="left")
    hi = np.searchsorted(sx, x, side="right")
    return 0.5 * (lo + hi + 1)


def auroc(in_scores: np.ndarray, out_scores: np.ndarray) -> float:
    """P(in > out) + 0.5 P(in == out), via sorting in O(n log n)."""
    x = _check_scores("in_scores", in_scores)
    y = _check_scores("out_scores", out_scores)
    m, n = x.size, y.size
    r = midranks(np.concatenate([x, y]))
    return float((r[:m].sum() - m * (m + 1) / 2) / (m * n))


def roc_points(
    in_scores: np.ndarray, out_scores: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ROC staircase (fpr, tpr, thresholds), thresholds descending.

    The threshold set is every distinct observed score plus +/-inf
    sentinels, so the curve starts at (0, 0) and ends at (1, 1).
    """
    x = _check_scores("in_scores", in_scores)
    y = _check_scores("out_scores", out_scores)
    thr = np.unique(np.concatenate([x, y]))[::-1]
    thr = np.concatenate([[np.inf], thr, [-np.inf]])
    # score >= t counts via searchsorted on the ascending sort
    sx, sy = np.sort(x), np.sort(y)
    tpr = (x.size - np.searchsorted(sx, thr, side="left")) / x.size
    fpr = (y.size - np.searchsorted(sy, thr, side="left")) / y.size
    return fpr, tpr, thr


def _trapezoid(xs: np.ndarray, ys: np.ndarray) -> float:
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) * 0.5))


@dataclass(frozen=True)
class OscCurve:
    """Open-set classification curve over every score threshold."""

    thresholds: np.ndarray  # descending, with +/-inf sentinels
    fpr: np.ndarray  # fraction of out-samples with score >= t
    ccr: np.ndarray  # fraction of in-samples with score >= t and correct
    auosc: float
    closed_set_accuracy: float
    normalized_auosc: float


def osc_curve(
    in_scores: np.ndarray, in_correct: np.ndarray, out_scores: np.ndarray
) -> OscCurve:
    """Sweep all distinct thresholds; integrate CCR over FPR by trapezoid.

    ``normalized_auosc`` divides by closed-set accuracy so a classifier that
    separates perfectly but misclassifies some in-samples still reaches 1.0.
    Accuracy zero is mapped to normalized 0 (the curve is identically zero).
    """
    x = _check_scores("in_scores", in_scores)
    y = _check_scores("out_scores", out_scores)
    correct = np.asarray(in_correct, dtype=bool)
    if correct.shape != x.shape:
        raise ValueError("in_correct must align with in_scores")
    thr = np.unique(np.concatenate([x, y]))[::-1]
    thr = np.concatenate([[np.inf], thr, [-np.inf]])
    sy = np.sort(y)
    fpr = (y.size - np.searchsorted(sy, thr, side="left")) / y.size
    sxc = np.sort(x[correct])
    ccr = (sxc.size - np.searchsorted(sxc, thr, side="left")) / x.size
    auosc = _trapezoid(fpr, ccr)
    acc = float(correct.mean())
    normalized = auosc / acc if acc > 0 else 0.0
    return OscCurve(thr, fpr, ccr, auosc, acc, normalized)


@dataclass(frozen=True)
class DelongResult:
    auc_a: float
    auc_b: float
    var_diff: float
    z: float
    p: float


def _delong_components(
    in_scores: np.ndarray, out_scores: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """AUROC plus per-sample structural components (midrank form)."""
    m, n = in_scores.size, out_scores.size
    tz = midranks(np.concatenate([in_scores, out_scores]))
    tx = midranks(in_scores)
    ty = midranks(out_scores)
    v_in = (tz[:m] - tx) / n
    v_out = 1.0 - (tz[m:] - ty) / m
    auc = float((tz[:m].sum() - m * (m + 1) / 2) / (m * n))
    return auc, v_in, v_out


def delong_test(
    a_in: np.ndarray,
    a_out: np.ndarray,
    b_in: np.ndarray,
    b_out: np.ndarray,
) -> DelongResult:
    """Paired two-sided DeLong test for AUROC(a) == AUROC(b).

    Both detectors must score the same evaluation samples, so the in/out
    lengths must match across detectors. Zero estimated variance with equal
    AUCs degenerates to z = 0, p = 1; zero variance with unequal AUCs is
    reported as infinite z, p = 0.
    """
    ax = _check_scores("a_in", a_in)
    ay = _check_scores("a_out", a_out)
    bx = _check_scores("b_in", b_in)
    by = _check_scores("b_out", b_out)
    if ax.size != bx.size or ay.size != by.size:
        raise ValueError("paired test requires aligned score vectors")
    if ax.size < 2 or ay.size < 2:
        raise ValueError("need at least two in- and two out-samples")
    auc_a, va_in, va_out = _delong_components(ax, ay)
    auc_b, vb_in, vb_out = _delong_components(bx, by)
    m, n = ax.size, ay.size
    s_in = np.cov(np.stack([va_in, vb_in]))  # ddof=1
    s_out = np.cov(np.stack([va_out, vb_out]))
    var = float(
        (s_in[0, 0] + s_in[1, 1] - 2 * s_in[0, 1]) / m
        + (s_out[0, 0] + s_out[1, 1] - 2 * s_out[0, 1]) / n
    )
    diff = auc_a - auc_b
    if var <= 0 or var < 1e-300:
        if diff == 0.0:
            return DelongResult(auc_a, auc_b, max(var, 0.0), 0.0, 1.0)
        z = math.copysign(math.inf, diff)
        return DelongResult(auc_a, auc_b, max(var, 0.0), z, 0.0)
    z = diff / math.sqrt(var)
    p = float(2.0 * norm.sf(abs(z)))
    return DelongResult(auc_a, auc_b, var, z, p)


def holm_adjust(pvalues: np.ndarray) -> np.ndarray:
    """Holm-Bonferroni step-down adjusted p-values, original order."""
    p = np.asarray(pvalues, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("pvalues must be 1-D")
    order = np.argsort(p, kind="mergesort")
    adj = np.empty_like(p)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, (p.size - i) * p[idx])
        adj[idx] = min(1.0, running)
    return adj


@dataclass(frozen=True)
class ScoreSet:
    """One detector's scores on one evaluation draw."""

    in_scores: np.ndarray
    out_scores: np.ndarray
    in_correct: np.ndarray  # closed-set prediction == true label


@dataclass
class ReportCell:
    regime: str
    method: str
    tier: str
    auroc: float
    auosc: float
    normalized_auosc: float
    n_runs: int
    top: bool = False
    matches_top: bool = False
    p_vs_top: float = math.nan


@dataclass
class Report:
    tiers: list[str]
    cells: list[ReportCell]
    method_means: dict[tuple[str, str], float] = field(default_factory=dict)
    regime_means: dict[str, float] = field(default_factory=dict)
    alpha: float = 0.01

    def cell(self, regime: str, method: str, tier: str) -> ReportCell:
        for c in self.cells:
            if (c.regime, c.method, c.tier) == (regime, method, tier):
                return c
        raise KeyError((regime, method, tier))

    def render_csv(self) -> str:
        lines = ["regime,method,tier,auroc,auosc,normalized_auosc,top,matches_top,p_vs_top"]
        for c in self.cells:
            lines.append(
                f"{c.regime},{c.method},{c.tier},{c.auroc:.3f},{c.auosc:.3f},"
                f"{c.normalized_auosc:.3f},{int(c.top)},{int(c.matches_top)},"
                f"{c.p_vs_top:.4g}"
            )
        return "\n".join(lines) + "\n"

    def render_text(self) -> str:
        rows = sorted({(c.regime, c.method) for c in self.cells})
        name_w = max(
            [len("regime  method")]
            + [len(f"{r}  {m}") for r, m in rows]
        )
        header = "regime  method".ljust(name_w) + "".join(
            f"  {t:>9}" for t in self.tiers
        ) + f"  {'mean':>9}"
        lines = [header]
        for r, m in rows:
            row = f"{r}  {m}".ljust(name_w)
            for t in self.tiers:
                c = self.cell(r, m, t)
                mark = "*" if c.top else ("~" if c.matches_top else " ")
                row += f"  {c.auroc:8.3f}{mark}"
            row += f"  {self.method_means[(r, m)]:9.3f}"
            lines.append(row)
        lines.append("")
        lines.append("regime means (AUROC):")
        for r in sorted(self.regime_means):
            lines.append(f"  {r}: {self.regime_means[r]:.3f}")
        lines.append("")
        lines.append("* column top   ~ statistically indistinguishable from top")
        return "\n".join(lines) + "\n"


def build_report(
    runs: dict[tuple[str, str, str], list[ScoreSet]],
    tiers: tuple[str, ...] = ("noise", "inter", "intra"),
    alpha: float = 0.01,
) -> Report:
    """Aggregate per-run scores into a report table.

    ``runs`` maps (regime, method, tier) to that cell's evaluation draws.
    Cell metrics are means over draws. Within each tier column the best
    mean-AUROC cell is flagged, and every other cell is compared against it
    with a paired DeLong test on the pooled draws; cells whose
    Holm-adjusted p is >= ``alpha`` are flagged indistinguishable.
    """
    cells: list[ReportCell] = []
    for (regime, method, tier), sets in runs.items():
        if tier not in tiers:
            raise ValueError(f"unknown tier {tier!r}")
        if not sets:
            raise ValueError(f"no runs for cell {(regime, method, tier)}")
        aurocs = [auroc(s.in_scores, s.out_scores) for s in sets]
        curves = [osc_curve(s.in_scores, s.in_correct, s.out_scores) for s in sets]
        cells.append(
            ReportCell(
                regime=regime,
                method=method,
                tier=tier,
                auroc=float(np.mean(aurocs)),
                auosc=float(np.mean([c.auosc for c in curves])),
                normalized_auosc=float(np.mean([c.normalized_auosc for c in curves])),
                n_runs=len(sets),
            )
        )

    def pooled(key: tuple[str, str, str]) -> tuple[np.ndarray, np.ndarray]:
        sets = runs[key]
        return (
            np.concatenate([s.in_scores for s in sets]),
            np.concatenate([s.out_scores for s in sets]),
        )

    for tier in tiers:
        col = [c for c in cells if c.tier == tier]
        if not col:
            continue
        top = max(col, key=lambda c: c.auroc)
        top.top = True
        top.matches_top = True
        top.p_vs_top = 1.0
        top_in, top_out = pooled((top.regime, top.method, top.tier))
        others = [c for c in col if c is not top]
        ps = []
        for c in others:
            c_in, c_out = pooled((c.regime, c.method, c.tier))
            if c_in.size == top_in.size and c_out.size == top_out.size:
                ps.append(delong_test(c_in, c_out, top_in, top_out).p)
            else:
                ps.append(math.nan)  # unpaired cells cannot be compared
        if others:
            valid = [i for i, p in enumerate(ps) if not math.isnan(p)]
            adj = holm_adjust(np.array([ps[i] for i in valid])) if valid else []
            for j, i in enumerate(valid):
                others[i].p_vs_top = float(adj[j])
                others[i].matches_top = bool(adj[j] >= alpha)

    report = Report(tiers=list(tiers), cells=cells, alpha=alpha)
    for c in cells:
        key = (c.regime, c.method)
        vals = [x.auroc for x in cells if (x.regime, x.method) == key]
        report.method_means[key] = float(np.mean(vals))
    for regime in {c.regime for c in cells}:
        vals = [x.auroc for x in cells if x.regime == regime]
        report.regime_means[regime] = float(np.mean(vals))
    return report
