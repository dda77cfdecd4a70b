"""Static SVG rendering: decision-region grids, feature scatters, metric curves.

Documents are plain SVG 1.1 text with fixed element order and
6-significant-digit coordinates, so identical inputs render to
identical bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .detectors import Batch
from .errors import ConfigError, DataError
from .metrics import OscCurve, auroc, roc_points
from .nets import Network, feature_dim

_W = 480.0
_H = 480.0
_ML, _MR, _MT, _MB = 54.0, 16.0, 20.0, 40.0

PALETTE = (
    "#1F77B4", "#FF7F0E", "#2CA02C", "#D62728", "#9467BD",
    "#8C564B", "#E377C2", "#7F7F7F", "#BCBD22", "#17BECF",
)
ACCEPT_FILL = "#0000FF"
REJECT_FILL = "#FF0000"


def _n(v) -> str:
    """Canonical 6-significant-digit number formatting."""
    return format(float(v), ".6g")


@dataclass(frozen=True)
class _Frame:
    """Affine map from data coordinates into the fixed plot area."""

    x0: float
    x1: float
    y0: float
    y1: float

    def px(self, x):
        t = (np.asarray(x, dtype=np.float64) - self.x0) / (self.x1 - self.x0)
        return _ML + t * (_W - _ML - _MR)

    def py(self, y):
        t = (np.asarray(y, dtype=np.float64) - self.y0) / (self.y1 - self.y0)
        return _H - _MB - t * (_H - _MT - _MB)


def _open(title: str) -> list[str]:
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="480" height="480" '
        'viewBox="0 0 480 480" font-family="sans-serif" font-size="11">',
        '<rect x="0" y="0" width="480" height="480" fill="#FFFFFF"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_n(_W / 2)}" y="14" text-anchor="middle" '
            f'font-size="13">{escape(title)}</text>'
        )
    return parts


def _border(parts: list[str]) -> None:
    parts.append(
        f'<rect x="{_n(_ML)}" y="{_n(_MT)}" width="{_n(_W - _ML - _MR)}" '
        f'height="{_n(_H - _MT - _MB)}" fill="none" stroke="#000000"/>'
    )


def _corner_labels(parts: list[str], frame: _Frame) -> None:
    yb = _H - _MB + 14.0
    parts.append(f'<text x="{_n(_ML)}" y="{_n(yb)}" text-anchor="middle">{_n(frame.x0)}</text>')
    parts.append(f'<text x="{_n(_W - _MR)}" y="{_n(yb)}" text-anchor="middle">{_n(frame.x1)}</text>')
    parts.append(f'<text x="{_n(_ML - 6)}" y="{_n(_H - _MB)}" text-anchor="end">{_n(frame.y0)}</text>')
    parts.append(f'<text x="{_n(_ML - 6)}" y="{_n(_MT + 8)}" text-anchor="end">{_n(frame.y1)}</text>')


def _legend(parts: list[str], entries, corner: str = "tl") -> None:
    """Rows of (swatch color or None, text); tl or br placement."""
    if corner == "br":
        x = _ML + 0.45 * (_W - _ML - _MR)
        y = _H - _MB - 10.0 - 16.0 * (len(entries) - 1)
    else:
        x = _ML + 8.0
        y = _MT + 14.0
    for color, text in entries:
        tx = x
        if color is not None:
            parts.append(f'<rect x="{_n(x)}" y="{_n(y - 9)}" width="10" height="10" fill="{color}"/>')
            tx = x + 14.0
        parts.append(f'<text x="{_n(tx)}" y="{_n(y)}">{escape(text)}</text>')
        y += 16.0


def _check_bounds(bounds) -> tuple[float, float, float, float]:
    try:
        x0, x1, y0, y1 = (float(v) for v in bounds)
    except (TypeError, ValueError) as e:
        raise ConfigError("bounds must be (xmin, xmax, ymin, ymax)") from e
    if not np.all(np.isfinite([x0, x1, y0, y1])) or x1 <= x0 or y1 <= y0:
        raise ConfigError("bounds must be finite with xmax > xmin and ymax > ymin")
    return x0, x1, y0, y1


# ------------------------------------------------------- boundary grid


def _grid_eval(net: Network, detector, bounds, resolution, delta):
    d_feat = feature_dim(net.arch)
    if d_feat != 2:
        raise ConfigError(f"decision-region grids need feature_dim 2, got {d_feat}")
    if int(resolution) != resolution or resolution < 50:
        raise ConfigError("resolution must be an integer >= 50")
    res = int(resolution)
    x0, x1, y0, y1 = _check_bounds(bounds)
    xs = x0 + (np.arange(res) + 0.5) * (x1 - x0) / res
    ys = y0 + (np.arange(res) + 0.5) * (y1 - y0) / res
    z = np.column_stack([np.tile(xs, res), np.repeat(ys, res)])
    head = net.params[-1]
    if "w" not in head:
        raise ConfigError("grid rendering needs a dense final layer")
    logits = z @ head["w"].astype(np.float64) + head["b"].astype(np.float64)
    batch = Batch(features=z, logits=logits)
    cut = float(detector.delta if delta is None else delta)
    scores = np.asarray(detector.score(batch), dtype=np.float64)
    labels = np.asarray(detector.predict(batch))
    return (scores >= cut).reshape(res, res), labels.reshape(res, res), xs, ys


def boundary_grid_mask(net: Network, detector, bounds, resolution, delta=None):
    """Acceptance mask over cell centers, indexed [iy, ix], plus center coords.

    Grid feature points are mapped through the final dense layer to give
    output-head detectors their logits; feature-space detectors score the
    points directly. A cell is accepted when score >= delta.
    """
    mask, _, xs, ys = _grid_eval(net, detector, bounds, resolution, delta)
    return mask, xs, ys


def scaled_bounds(features, scale: float = 3.0) -> tuple[float, float, float, float]:
    """Axis bounds spanning ``scale`` times the feature extent, same center."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != 2:
        raise DataError("scaled_bounds needs [n, 2] features")
    lo, hi = f.min(axis=0), f.max(axis=0)
    mid = (lo + hi) / 2.0
    half = np.maximum((hi - lo) / 2.0, 1e-9) * scale
    return (
        float(mid[0] - half[0]),
        float(mid[0] + half[0]),
        float(mid[1] - half[1]),
        float(mid[1] + half[1]),
    )


def render_boundary_grid(
    net: Network, detector, bounds, resolution: int = 200, delta=None, title: str = ""
) -> str:
    """Acceptance and rejection cells with a class boundary overlay.

    Cell colors threshold the detector score at delta; the overlay marks
    edges where neighboring cells disagree on the closed-set prediction.
    The perturbation scorer runs in its temperature-only mode here since
    grid points live in feature space, not input space.
    """
    mask, labels, xs, ys = _grid_eval(net, detector, bounds, resolution, delta)
    res = xs.size
    x0, x1, y0, y1 = _check_bounds(bounds)
    frame = _Frame(x0, x1, y0, y1)
    cw = (x1 - x0) / res
    ch = (y1 - y0) / res
    parts = _open(title)
    parts.append('<g shape-rendering="crispEdges" fill-opacity="0.2">')
    for iy in range(res):
        row = mask[iy]
        cuts = np.flatnonzero(row[1:] != row[:-1]) + 1
        starts = np.concatenate([[0], cuts])
        ends = np.concatenate([cuts, [res]])
        top = frame.py(y0 + (iy + 1) * ch)
        height = frame.py(y0 + iy * ch) - top
        for s, e in zip(starts, ends):
            left = frame.px(x0 + s * cw)
            width = frame.px(x0 + e * cw) - left
            fill = ACCEPT_FILL if row[s] else REJECT_FILL
            parts.append(
                f'<rect x="{_n(left)}" y="{_n(top)}" width="{_n(width)}" '
                f'height="{_n(height)}" fill="{fill}"/>'
            )
    parts.append("</g>")
    segs: list[str] = []
    vdiff = labels[:, 1:] != labels[:, :-1]
    hdiff = labels[1:, :] != labels[:-1, :]
    for iy, ix in np.argwhere(vdiff):
        ex = _n(frame.px(x0 + (ix + 1) * cw))
        segs.append(
            f"M{ex} {_n(frame.py(y0 + (iy + 1) * ch))}L{ex} {_n(frame.py(y0 + iy * ch))}"
        )
    for iy, ix in np.argwhere(hdiff):
        ey = _n(frame.py(y0 + (iy + 1) * ch))
        segs.append(
            f"M{_n(frame.px(x0 + ix * cw))} {ey}L{_n(frame.px(x0 + (ix + 1) * cw))} {ey}"
        )
    if segs:
        parts.append(f'<path d="{"".join(segs)}" stroke="#000000" fill="none"/>')
    _border(parts)
    _corner_labels(parts, frame)
    entries = [
        (ACCEPT_FILL, f"accept: score >= {_n(detector.delta if delta is None else delta)}"),
        (REJECT_FILL, "reject"),
    ]
    note = f"method: {detector.method}"
    if detector.method == "odin":
        note += " (temperature only, no input perturbation)"
    entries.append((None, note))
    _legend(parts, entries)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ------------------------------------------------------------- scatter


def _margin_bounds(points: np.ndarray) -> tuple[float, float, float, float]:
    """Data bounds padded by 5 percent of the span per axis."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = hi - lo
    pad = np.where(span > 0, 0.05 * span, 0.5)
    lo = lo - pad
    hi = hi + pad
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def render_scatter(features, labels, outliers=None, title: str = "") -> str:
    """Per-class colored points with a black out-of-distribution overlay."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != 2:
        raise DataError("scatter needs [n, 2] features")
    y = np.asarray(labels)
    if y.shape != (f.shape[0],):
        raise DataError("labels must align with features")
    out = None
    if outliers is not None:
        out = np.asarray(outliers, dtype=np.float64)
        if out.ndim != 2 or out.shape[1] != 2:
            raise DataError("outliers must be [m, 2]")
        if out.shape[0] == 0:
            out = None
    stack = f if out is None else np.concatenate([f, out])
    if stack.shape[0] == 0:
        raise DataError("nothing to draw")
    frame = _Frame(*_margin_bounds(stack))
    parts = _open(title)
    classes = sorted(int(c) for c in np.unique(y))
    for c in classes:
        color = PALETTE[c % len(PALETTE)]
        sel = y == c
        for cx, cy in zip(frame.px(f[sel, 0]), frame.py(f[sel, 1])):
            parts.append(f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="2.5" fill="{color}"/>')
    if out is not None:
        for cx, cy in zip(frame.px(out[:, 0]), frame.py(out[:, 1])):
            parts.append(f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="2.5" fill="#000000"/>')
    _border(parts)
    _corner_labels(parts, frame)
    entries = [(PALETTE[c % len(PALETTE)], f"class {c}") for c in classes]
    if out is not None:
        entries.append(("#000000", "out"))
    _legend(parts, entries)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -------------------------------------------------------------- curves


@dataclass(frozen=True)
class RocCurve:
    """ROC staircase with its rank-based area, ready for plotting."""

    fpr: np.ndarray
    tpr: np.ndarray
    auroc: float


def roc_curve(in_scores, out_scores) -> RocCurve:
    fpr, tpr, _ = roc_points(in_scores, out_scores)
    return RocCurve(fpr, tpr, auroc(in_scores, out_scores))


def render_curves(curves: Sequence, labels=None, title: str = "") -> str:
    """Overlaid ROC or open-set curves on the unit square with a diagonal."""
    if len(curves) == 0:
        raise ConfigError("render_curves needs at least one curve")
    if labels is None:
        labels = [f"curve {i + 1}" for i in range(len(curves))]
    if len(labels) != len(curves):
        raise ConfigError("labels must match curves one to one")
    frame = _Frame(0.0, 1.0, 0.0, 1.0)
    parts = _open(title)
    parts.append(
        f'<path d="M{_n(frame.px(0.0))} {_n(frame.py(0.0))}'
        f'L{_n(frame.px(1.0))} {_n(frame.py(1.0))}" '
        'stroke="#999999" stroke-dasharray="4 3" fill="none"/>'
    )
    entries = []
    for i, curve in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        if isinstance(curve, OscCurve):
            xs, ys = curve.fpr, curve.ccr
            entries.append((color, f"{labels[i]}: AUOSC={curve.auosc:.3f}"))
        else:
            xs, ys = curve.fpr, curve.tpr
            entries.append((color, f"{labels[i]}: AUROC={curve.auroc:.3f}"))
        pts = " ".join(f"{_n(a)},{_n(b)}" for a, b in zip(frame.px(xs), frame.py(ys)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    _border(parts)
    _corner_labels(parts, frame)
    _legend(parts, entries, corner="br")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
