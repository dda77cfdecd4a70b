import re

import numpy as np
import pytest

from oskit.detectors import Batch, Odin, TauSoftmax
from oskit.errors import ConfigError, DataError
from oskit.mahalanobis import Mahalanobis
from oskit.metrics import auroc, osc_curve
from oskit.nets import Architecture, Dense, Relu, init_network
from oskit.plots import (
    ACCEPT_FILL,
    REJECT_FILL,
    _ML,
    _MR,
    _MT,
    _MB,
    _H,
    _W,
    _n,
    boundary_grid_mask,
    render_boundary_grid,
    render_curves,
    render_scatter,
    roc_curve,
)
from oskit.rng import rng_for


def _plane_net(seed=0, k=3):
    arch = Architecture((4,), (Dense(2), Relu(), Dense(k)))
    return init_network(arch, seed=seed, dtype=np.float64)


def _set_head(net, w, b=None):
    w = np.asarray(w, dtype=np.float64)
    net.params[-1] = {"w": w, "b": np.zeros(w.shape[1]) if b is None else np.asarray(b, dtype=np.float64)}
    return net


class _Flat:
    """Constant score above its threshold; a single predicted class."""

    method = "flat"
    delta = 1.0

    def score(self, batch):
        return np.full(batch.features.shape[0], 2.0)

    def predict(self, batch):
        return np.zeros(batch.features.shape[0], dtype=int)


def _grid_rects(doc):
    grid = doc.split('<g shape-rendering="crispEdges"')[1].split("</g>")[0]
    pat = r'<rect x="([^"]+)" y="([^"]+)" width="([^"]+)" height="([^"]+)" fill="(#[0-9A-F]{6})"/>'
    return [(float(x), float(y), float(w), float(h), f) for x, y, w, h, f in re.findall(pat, grid)]


# ----------------------------------------------------- validation


def test_grid_rejects_wrong_feature_width():
    arch = Architecture((4,), (Dense(3), Relu(), Dense(3)))
    net = init_network(arch, seed=0)
    with pytest.raises(ConfigError):
        render_boundary_grid(net, _Flat(), (-1, 1, -1, 1), 50)


def test_grid_rejects_small_resolution_and_bad_bounds():
    net = _plane_net()
    with pytest.raises(ConfigError):
        render_boundary_grid(net, _Flat(), (-1, 1, -1, 1), 10)
    with pytest.raises(ConfigError):
        render_boundary_grid(net, _Flat(), (1, -1, -1, 1), 50)


# ------------------------------------------------ acceptance regions


def test_constant_score_grid_is_fully_acceptance():
    net = _plane_net()
    doc = render_boundary_grid(net, _Flat(), (-2, 2, -2, 2), 50)
    rects = _grid_rects(doc)
    assert len(rects) == 50  # one full-width run per row
    assert all(r[4] == ACCEPT_FILL for r in rects)
    mask, _, _ = boundary_grid_mask(net, _Flat(), (-2, 2, -2, 2), 50)
    assert mask.all()


def test_mahalanobis_acceptance_region_is_the_exact_disk():
    det = Mahalanobis(np.zeros((1, 2)), np.eye(2), lam=0.0, delta=-4.0)
    net = _plane_net(k=1)
    mask, xs, ys = boundary_grid_mask(net, det, (-5, 5, -5, 5), 50)
    expected = (ys[:, None] ** 2 + xs[None, :] ** 2) <= 4.0
    assert np.array_equal(mask, expected)
    assert expected.any() and not expected.all()


def test_softmax_region_reaches_border_mahalanobis_does_not():
    # class directions at 120 degree spacing; means on the unit circle
    w = np.array([[1.0, -0.5, -0.5], [0.0, np.sqrt(3) / 2, -np.sqrt(3) / 2]])
    net = _set_head(_plane_net(), w)
    bounds = (-30, 30, -30, 30)

    tau = TauSoftmax(delta=0.9)
    tau_mask, _, _ = boundary_grid_mask(net, tau, bounds, 50)
    maha = Mahalanobis(w.T.copy(), np.eye(2), lam=0.0, delta=-9.0)
    maha_mask, _, _ = boundary_grid_mask(net, maha, bounds, 50)

    def border(m):
        return np.concatenate([m[0], m[-1], m[:, 0], m[:, -1]])

    assert border(tau_mask).any()
    assert not border(maha_mask).any()
    assert maha_mask.any()  # bounded but nonempty


def test_svg_cells_match_direct_scoring():
    net = _plane_net(seed=7)
    det = TauSoftmax(delta=0.5)
    bounds = (-3.0, 5.0, -2.0, 6.0)
    res = 50
    doc = render_boundary_grid(net, det, bounds, res)

    # rebuild the acceptance mask from the rendered rect runs
    cw_px = (_W - _ML - _MR) / res
    ch_px = (_H - _MT - _MB) / res
    seen = np.zeros((res, res), dtype=bool)
    rebuilt = np.zeros((res, res), dtype=bool)
    for x, y, w, h, fill in _grid_rects(doc):
        ix0 = round((x - _ML) / cw_px)
        run = round(w / cw_px)
        iy = res - 1 - round((y - _MT) / ch_px)
        seen[iy, ix0 : ix0 + run] = True
        rebuilt[iy, ix0 : ix0 + run] = fill == ACCEPT_FILL
    assert seen.all()

    x0, x1, y0, y1 = bounds
    xs = x0 + (np.arange(res) + 0.5) * (x1 - x0) / res
    ys = y0 + (np.arange(res) + 0.5) * (y1 - y0) / res
    z = np.column_stack([np.tile(xs, res), np.repeat(ys, res)])
    logits = z @ net.params[-1]["w"] + net.params[-1]["b"]
    direct = (det.score(Batch(features=z, logits=logits)) >= 0.5).reshape(res, res)
    assert np.array_equal(rebuilt, direct)


def test_odin_grid_mode_noted_in_legend():
    net = _plane_net()
    det = Odin(temperature=10.0, epsilon=0.002, delta=0.3)
    doc = render_boundary_grid(net, det, (-2, 2, -2, 2), 50)
    assert "temperature only, no input perturbation" in doc


# ------------------------------------------------------------ scatter


def test_scatter_marker_counts_and_colors():
    rng = rng_for(1, "plot-scatter")
    f = rng.normal(size=(37, 2))
    labels = rng.integers(0, 3, size=37)
    out = rng.normal(size=(11, 2)) + 4.0
    doc = render_scatter(f, labels, out)
    circles = re.findall(r'<circle [^>]*fill="(#[0-9A-F]{6})"/>', doc)
    assert len(circles) == 48
    assert sum(c == "#000000" for c in circles) == 11


def test_scatter_without_outliers_renders_only_clusters():
    f = np.array([[0.0, 0.0], [1.0, 1.0]])
    doc = render_scatter(f, [0, 1], outliers=np.empty((0, 2)))
    circles = re.findall(r'<circle [^>]*fill="(#[0-9A-F]{6})"/>', doc)
    assert len(circles) == 2
    assert "#000000" not in circles
    assert ">out<" not in doc


def test_scatter_axis_bounds_add_five_percent_margin():
    f = np.array([[0.0, 10.0], [20.0, 50.0]])
    doc = render_scatter(f, [0, 1])
    # x span 20, y span 40
    for v in (-1.0, 21.0, 8.0, 52.0):
        assert f">{_n(v)}<" in doc


def test_scatter_rejects_wrong_width():
    with pytest.raises(DataError):
        render_scatter(np.zeros((4, 3)), [0, 0, 1, 1])
    with pytest.raises(DataError):
        render_scatter(np.zeros((4, 2)), [0, 1])


# ------------------------------------------------------------- curves


def test_perfect_curve_passes_through_top_left():
    c = roc_curve(np.ones(100), np.zeros(100))
    assert c.auroc == 1.0
    doc = render_curves([c], labels=["perfect"])
    top_left = f"{_n(_ML)},{_n(_MT)}"
    assert top_left in doc
    assert "perfect: AUROC=1.000" in doc


def test_random_curve_hugs_the_diagonal():
    rng = rng_for(0, "plot-roc")
    c = roc_curve(rng.normal(size=10_000), rng.normal(size=10_000))
    assert np.max(np.abs(c.tpr - c.fpr)) < 0.05
    doc = render_curves([c])
    assert f"curve 1: AUROC={c.auroc:.3f}" in doc


def test_legend_value_matches_metric_to_three_decimals():
    rng = rng_for(5, "plot-roc2")
    s_in = rng.normal(size=300) + 1.0
    s_out = rng.normal(size=300)
    doc = render_curves([roc_curve(s_in, s_out)], labels=["det"])
    assert f"det: AUROC={auroc(s_in, s_out):.3f}" in doc


def test_osc_curve_legend_uses_auosc():
    rng = rng_for(6, "plot-osc")
    s_in = rng.normal(size=200) + 2.0
    correct = rng.random(200) < 0.9
    s_out = rng.normal(size=200)
    c = osc_curve(s_in, correct, s_out)
    doc = render_curves([c], labels=["open"])
    assert f"open: AUOSC={c.auosc:.3f}" in doc


def test_curves_require_input_and_matched_labels():
    with pytest.raises(ConfigError):
        render_curves([])
    with pytest.raises(ConfigError):
        render_curves([roc_curve(np.ones(3), np.zeros(3))], labels=["a", "b"])


# ------------------------------------------------------ determinism


def test_rendering_is_deterministic_byte_for_byte():
    net = _plane_net(seed=3)
    det = TauSoftmax(delta=0.4)
    rng = rng_for(2, "plot-det")
    f = rng.normal(size=(25, 2))
    labels = rng.integers(0, 4, size=25)
    out = rng.normal(size=(9, 2)) * 3.0
    curves = [roc_curve(rng.normal(size=50) + 1, rng.normal(size=50))]

    a1 = render_boundary_grid(net, det, (-2, 2, -2, 2), 50, title="grid")
    a2 = render_boundary_grid(net, det, (-2, 2, -2, 2), 50, title="grid")
    b1 = render_scatter(f, labels, out, title="scatter")
    b2 = render_scatter(f, labels, out, title="scatter")
    c1 = render_curves(curves, title="curves")
    c2 = render_curves(curves, title="curves")
    assert a1.encode() == a2.encode()
    assert b1.encode() == b2.encode()
    assert c1.encode() == c2.encode()
    assert a1.startswith("<svg ") and a1.endswith("</svg>\n")
