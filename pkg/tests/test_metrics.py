"""Metrics against brute-force oracles and invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oskit.metrics import (
    DelongResult,
    ScoreSet,
    auroc,
    build_report,
    delong_test,
    holm_adjust,
    midranks,
    osc_curve,
    roc_points,
)

# ---------------------------------------------------------------- oracles


def auroc_pairwise(x, y):
    """O(n^2) Mann-Whitney count: wins + half ties over all pairs."""
    wins = 0.0
    for a in x:
        for b in y:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(x) * len(y))


def _psi_components(x, y):
    m, n = len(x), len(y)
    psi = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            if x[i] > y[j]:
                psi[i, j] = 1.0
            elif x[i] == y[j]:
                psi[i, j] = 0.5
    return psi.mean(), psi.mean(axis=1), psi.mean(axis=0)


def _cov1(u, v):
    um, vm = u.mean(), v.mean()
    return float(np.sum((u - um) * (v - vm)) / (len(u) - 1))


def delong_oracle(a_in, a_out, b_in, b_out):
    """Quadratic-time structural components, explicit covariance algebra."""
    auc_a, va_i, va_o = _psi_components(a_in, a_out)
    auc_b, vb_i, vb_o = _psi_components(b_in, b_out)
    m, n = len(a_in), len(a_out)
    var = (
        _cov1(va_i, va_i) + _cov1(vb_i, vb_i) - 2 * _cov1(va_i, vb_i)
    ) / m + (_cov1(va_o, va_o) + _cov1(vb_o, vb_o) - 2 * _cov1(va_o, vb_o)) / n
    diff = auc_a - auc_b
    if var <= 0:
        return auc_a, auc_b, var, 0.0, 1.0
    z = diff / math.sqrt(var)
    from scipy.stats import norm

    return auc_a, auc_b, var, z, float(2 * norm.sf(abs(z)))


def osc_oracle(in_s, correct, out_s):
    """Exhaustive threshold sweep, trapezoid over the parametric staircase."""
    in_s = np.asarray(in_s, float)
    out_s = np.asarray(out_s, float)
    correct = np.asarray(correct, bool)
    thr = [math.inf] + sorted(set(in_s) | set(out_s), reverse=True) + [-math.inf]
    pts = [
        (float(np.mean(out_s >= t)), float(np.mean((in_s >= t) & correct)))
        for t in thr
    ]
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y1 + y0) / 2
    return area


def quantized_scores(min_size=2, max_size=40):
    # quarter-integer grid forces frequent ties
    return st.lists(
        st.integers(-40, 40).map(lambda i: i / 4),
        min_size=min_size,
        max_size=max_size,
    )


# ----------------------------------------------------------------- AUROC


def test_auroc_hand_instance():
    assert auroc([0.9, 0.8], [0.85, 0.1]) == pytest.approx(0.75, abs=1e-15)


def test_auroc_extremes():
    assert auroc([2.0, 3.0], [0.0, 1.0]) == 1.0
    assert auroc([0.0, 1.0], [2.0, 3.0]) == 0.0
    assert auroc([1.0, 1.0], [1.0, 1.0]) == 0.5


def test_auroc_rejects_nan():
    with pytest.raises(ValueError):
        auroc([0.1, float("nan")], [0.0])
    with pytest.raises(ValueError):
        auroc([], [0.0])


@given(quantized_scores(), quantized_scores())
def test_auroc_matches_pairwise_oracle(xs, ys):
    assert auroc(xs, ys) == pytest.approx(auroc_pairwise(xs, ys), abs=1e-12)


@given(quantized_scores(), quantized_scores())
def test_auroc_complement_identity(xs, ys):
    assert auroc(xs, ys) + auroc(ys, xs) == pytest.approx(1.0, abs=1e-12)


@given(quantized_scores(), quantized_scores())
def test_roc_trapezoid_equals_auroc(xs, ys):
    fpr, tpr, thr = roc_points(xs, ys)
    area = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) * 0.5))
    assert area == pytest.approx(auroc(xs, ys), abs=1e-12)
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert np.all(np.diff(thr) <= 0)


def test_midranks_ties():
    np.testing.assert_allclose(midranks(np.array([3.0, 1.0, 3.0])), [2.5, 1.0, 2.5])


# ---------------------------------------------------------------- DeLong


def _correlated_instance(seed, m=50, n=50):
    rng = np.random.default_rng(seed)
    u_in = rng.normal(1.0, 1.0, m)
    u_out = rng.normal(0.0, 1.0, n)
    a_in = np.round(u_in + rng.normal(0, 0.4, m), 1)
    a_out = np.round(u_out + rng.normal(0, 0.4, n), 1)
    b_in = np.round(u_in + rng.normal(0, 0.4, m), 1)
    b_out = np.round(u_out + rng.normal(0, 0.4, n), 1)
    return a_in, a_out, b_in, b_out


@pytest.mark.parametrize("seed", range(6))
def test_delong_matches_quadratic_oracle(seed):
    a_in, a_out, b_in, b_out = _correlated_instance(seed)
    got = delong_test(a_in, a_out, b_in, b_out)
    auc_a, auc_b, var, z, p = delong_oracle(a_in, a_out, b_in, b_out)
    assert got.auc_a == pytest.approx(auc_a, abs=1e-12)
    assert got.auc_b == pytest.approx(auc_b, abs=1e-12)
    assert got.var_diff == pytest.approx(var, abs=1e-10)
    assert got.z == pytest.approx(z, abs=1e-8)
    assert got.p == pytest.approx(p, abs=1e-10)


def test_delong_identical_scores_degenerate():
    rng = np.random.default_rng(0)
    s_in = rng.normal(1, 1, 30)
    s_out = rng.normal(0, 1, 30)
    res = delong_test(s_in, s_out, s_in, s_out)
    assert res.z == 0.0 and res.p == 1.0


def test_delong_antisymmetric():
    a_in, a_out, b_in, b_out = _correlated_instance(7)
    r1 = delong_test(a_in, a_out, b_in, b_out)
    r2 = delong_test(b_in, b_out, a_in, a_out)
    assert r1.z == pytest.approx(-r2.z, abs=1e-12)
    assert r1.p == pytest.approx(r2.p, abs=1e-12)


def test_delong_requires_alignment():
    with pytest.raises(ValueError):
        delong_test([1.0, 2.0], [0.0, 0.5], [1.0, 2.0, 3.0], [0.0, 0.5])


def test_delong_p_close_to_stratified_bootstrap():
    a_in, a_out, b_in, b_out = _correlated_instance(3, m=200, n=200)
    obs = delong_test(a_in, a_out, b_in, b_out)
    rng = np.random.default_rng(12345)
    m, n = len(a_in), len(a_out)
    diffs = np.empty(10_000)
    for r in range(10_000):
        ii = rng.integers(0, m, m)
        oo = rng.integers(0, n, n)
        diffs[r] = auroc(a_in[ii], a_out[oo]) - auroc(b_in[ii], b_out[oo])
    se = diffs.std(ddof=1)
    from scipy.stats import norm

    p_boot = float(2 * norm.sf(abs(obs.auc_a - obs.auc_b) / se))
    assert abs(obs.p - p_boot) <= 0.02


# ------------------------------------------------------------------- OSC


def test_osc_perfect_separation_and_classifier():
    in_s = np.array([4.0, 5.0, 6.0])
    out_s = np.array([1.0, 2.0, 3.0])
    c = osc_curve(in_s, [True, True, True], out_s)
    assert c.auosc == pytest.approx(1.0, abs=1e-15)
    assert c.normalized_auosc == pytest.approx(1.0, abs=1e-15)
    # CCR reaches 1.0 while FPR is still 0
    at_zero = c.ccr[c.fpr == 0.0]
    assert at_zero.max() == 1.0


def test_osc_all_misclassified_is_zero():
    c = osc_curve([4.0, 5.0], [False, False], [1.0, 2.0])
    assert c.auosc == 0.0
    assert c.normalized_auosc == 0.0


def test_osc_four_sample_instance_matches_sweep_oracle():
    in_s = [0.9, 0.8]
    correct = [True, False]
    out_s = [0.85, 0.1]
    expected = osc_oracle(in_s, correct, out_s)  # frozen: 0.5
    assert expected == pytest.approx(0.5, abs=1e-15)
    c = osc_curve(in_s, correct, out_s)
    assert c.auosc == pytest.approx(expected, abs=1e-12)
    assert c.closed_set_accuracy == 0.5
    assert c.normalized_auosc == pytest.approx(1.0, abs=1e-12)


@given(
    quantized_scores(min_size=2, max_size=30),
    quantized_scores(min_size=2, max_size=30),
    st.data(),
)
@settings(max_examples=60)
def test_osc_invariants(in_s, out_s, data):
    correct = data.draw(
        st.lists(st.booleans(), min_size=len(in_s), max_size=len(in_s))
    )
    c = osc_curve(in_s, correct, out_s)
    assert c.auosc == pytest.approx(osc_oracle(in_s, correct, out_s), abs=1e-12)
    a = auroc(in_s, out_s)
    assert c.auosc <= min(a, c.closed_set_accuracy) + 1e-12
    assert -1e-12 <= c.normalized_auosc <= 1.0 + 1e-12
    assert np.all(c.ccr <= c.closed_set_accuracy + 1e-15)
    assert np.all(np.diff(c.fpr) >= 0)


# ------------------------------------------------------------------ Holm


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_holm_adjust_properties(ps):
    adj = holm_adjust(np.array(ps))
    assert np.all(adj >= np.asarray(ps) - 1e-15)
    assert np.all(adj <= 1.0)
    order = np.argsort(ps, kind="mergesort")
    assert np.all(np.diff(adj[order]) >= -1e-15)


def test_holm_adjust_known_values():
    np.testing.assert_allclose(
        holm_adjust(np.array([0.01, 0.04, 0.03])), [0.03, 0.06, 0.06]
    )


# ---------------------------------------------------------------- report


def _score_set(rng, shift, m=60, n=60):
    return ScoreSet(
        in_scores=rng.normal(shift, 1, m),
        out_scores=rng.normal(0, 1, n),
        in_correct=rng.random(m) < 0.9,
    )


def test_build_report_flags_and_render():
    rng = np.random.default_rng(42)
    runs = {}
    for method, shift in [("strong", 2.5), ("weak", 0.3), ("mid", 2.3)]:
        for tier in ("noise", "inter", "intra"):
            runs[("ce", method, tier)] = [_score_set(rng, shift) for _ in range(3)]
    rep = build_report(runs)
    for tier in ("noise", "inter", "intra"):
        col = [c for c in rep.cells if c.tier == tier]
        assert sum(c.top for c in col) == 1
        top = next(c for c in col if c.top)
        assert top.auroc == max(c.auroc for c in col)
        weak = next(c for c in col if c.method == "weak")
        assert not weak.matches_top  # far below top, should be distinguishable
    txt = rep.render_text()
    csv = rep.render_csv()
    assert "regime" in csv.splitlines()[0]
    assert "*" in txt
    # means present for every method and regime
    assert ("ce", "strong") in rep.method_means
    assert "ce" in rep.regime_means


def test_report_renders_three_decimals():
    rng = np.random.default_rng(1)
    # build a cell whose mean AUROC is exactly 0.9761 by direct patching
    runs = {("ce", "m", "noise"): [_score_set(rng, 2.0)]}
    rep = build_report(runs, tiers=("noise",))
    rep.cells[0].auroc = 0.9761
    rep.method_means[("ce", "m")] = 0.9761
    assert "0.976" in rep.render_csv()
    assert "0.976" in rep.render_text()
