"""Deterministic synthetic glyph corpus in IDX layout.

Three roles mirror the desk-scale dataset trio: "mnist" holds stroke-drawn
digits (the in-distribution set), "letters" holds uppercase letters (the
background source), "fashion" holds filled and textured shapes (the
inter-dataset outliers). Every image is derived from a fixed stroke table
plus a per-sample seeded jitter, so regeneration is bit-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_idx_images, write_idx_labels
from .errors import ConfigError
from .rng import rng_for

SIDE = 28
GLYPH_ROLES = ("mnist", "fashion", "letters")
_BOX_LO, _BOX_SPAN = 4.0, 20.0  # design box [0,1]^2 mapped into the canvas


def _arc(cx, cy, rx, ry, a0, a1, n=20):
    t = np.deg2rad(np.linspace(a0, a1, n))
    return list(zip(cx + rx * np.cos(t), cy + ry * np.sin(t)))


# stroke tables: each glyph is a tuple of polylines in [0,1]^2, y down
_DIGITS = (
    (_arc(0.5, 0.5, 0.3, 0.4, 0, 360, 28),),
    ([(0.35, 0.22), (0.52, 0.08), (0.52, 0.92)],),
    (_arc(0.5, 0.3, 0.27, 0.2, -180, 10) + [(0.25, 0.92), (0.78, 0.92)],),
    (_arc(0.48, 0.29, 0.25, 0.2, -160, 80), _arc(0.48, 0.7, 0.28, 0.22, -80, 160)),
    ([(0.62, 0.08), (0.2, 0.62), (0.85, 0.62)], [(0.64, 0.3), (0.64, 0.92)]),
    ([(0.75, 0.1), (0.3, 0.1), (0.28, 0.45)], _arc(0.47, 0.66, 0.29, 0.25, -110, 120)),
    (_arc(0.5, 0.66, 0.26, 0.25, 0, 360, 24), _arc(0.58, 0.4, 0.34, 0.32, 185, 265)),
    ([(0.2, 0.1), (0.8, 0.1), (0.38, 0.92)],),
    (_arc(0.5, 0.3, 0.22, 0.2, 0, 360, 24), _arc(0.5, 0.7, 0.27, 0.22, 0, 360, 24)),
    (_arc(0.5, 0.34, 0.26, 0.24, 0, 360, 24), [(0.76, 0.34), (0.58, 0.92)]),
)

_LETTERS = (
    ([(0.2, 0.92), (0.5, 0.08), (0.8, 0.92)], [(0.32, 0.62), (0.68, 0.62)]),
    ([(0.25, 0.92), (0.25, 0.08)], _arc(0.25, 0.3, 0.3, 0.22, -90, 90),
     _arc(0.25, 0.7, 0.36, 0.22, -90, 90)),
    (_arc(0.55, 0.5, 0.32, 0.4, 60, 300),),
    ([(0.25, 0.08), (0.25, 0.92)], _arc(0.25, 0.5, 0.44, 0.42, -90, 90)),
    ([(0.75, 0.08), (0.25, 0.08), (0.25, 0.92), (0.75, 0.92)], [(0.25, 0.5), (0.65, 0.5)]),
    ([(0.75, 0.08), (0.25, 0.08), (0.25, 0.92)], [(0.25, 0.5), (0.65, 0.5)]),
    (_arc(0.55, 0.5, 0.32, 0.4, 60, 300), [(0.6, 0.55), (0.87, 0.55), (0.87, 0.78)]),
    ([(0.25, 0.08), (0.25, 0.92)], [(0.75, 0.08), (0.75, 0.92)], [(0.25, 0.5), (0.75, 0.5)]),
    ([(0.35, 0.08), (0.65, 0.08)], [(0.5, 0.08), (0.5, 0.92)], [(0.35, 0.92), (0.65, 0.92)]),
    ([(0.62, 0.08), (0.62, 0.68)], _arc(0.45, 0.68, 0.17, 0.22, 0, 150)),
    ([(0.25, 0.08), (0.25, 0.92)], [(0.75, 0.08), (0.27, 0.52)], [(0.38, 0.44), (0.78, 0.92)]),
    ([(0.28, 0.08), (0.28, 0.92), (0.78, 0.92)],),
    ([(0.15, 0.92), (0.15, 0.08), (0.5, 0.6), (0.85, 0.08), (0.85, 0.92)],),
    ([(0.2, 0.92), (0.2, 0.08), (0.8, 0.92), (0.8, 0.08)],),
    (_arc(0.5, 0.5, 0.32, 0.42, 0, 360, 28),),
    ([(0.27, 0.92), (0.27, 0.08)], _arc(0.27, 0.3, 0.34, 0.23, -90, 90)),
    (_arc(0.5, 0.5, 0.32, 0.42, 0, 360, 28), [(0.6, 0.65), (0.85, 0.95)]),
    ([(0.27, 0.92), (0.27, 0.08)], _arc(0.27, 0.3, 0.34, 0.23, -90, 90),
     [(0.33, 0.52), (0.78, 0.92)]),
    (_arc(0.5, 0.29, 0.25, 0.2, -210, 55), _arc(0.5, 0.71, 0.25, 0.2, -125, 140)),
    ([(0.2, 0.1), (0.8, 0.1)], [(0.5, 0.1), (0.5, 0.92)]),
    ([(0.25, 0.08), (0.25, 0.6)], _arc(0.5, 0.6, 0.25, 0.3, 180, 0), [(0.75, 0.6), (0.75, 0.08)]),
    ([(0.2, 0.08), (0.5, 0.92), (0.8, 0.08)],),
    ([(0.12, 0.08), (0.3, 0.92), (0.5, 0.3), (0.7, 0.92), (0.88, 0.08)],),
    ([(0.2, 0.08), (0.8, 0.92)], [(0.8, 0.08), (0.2, 0.92)]),
    ([(0.2, 0.08), (0.5, 0.45)], [(0.8, 0.08), (0.5, 0.45)], [(0.5, 0.45), (0.5, 0.92)]),
    ([(0.2, 0.1), (0.8, 0.1), (0.2, 0.9), (0.8, 0.9)],),
)


def _stroke_image(polylines, thickness: float) -> np.ndarray:
    """Union of 1px-antialiased thick segments on the 28x28 canvas."""
    yy, xx = np.mgrid[0:SIDE, 0:SIDE].astype(np.float64)
    img = np.zeros((SIDE, SIDE))
    for line in polylines:
        pts = np.asarray(line, dtype=np.float64) * _BOX_SPAN + _BOX_LO
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            den = dx * dx + dy * dy
            if den == 0:
                d = np.hypot(xx - x0, yy - y0)
            else:
                t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / den, 0.0, 1.0)
                d = np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))
            np.maximum(img, np.clip(thickness / 2 + 0.5 - d, 0.0, 1.0), out=img)
    return img


def _fill_image(cls: int, rng: np.random.Generator) -> np.ndarray:
    """Garment-like mid-gray fabric patches; u, v in [0,1].

    Classes are full-field weaves at distinct orientations and
    frequencies plus two hollow cut-outs. Peak intensity stays well
    below the stroke roles, and compact solid silhouettes are
    deliberately absent: a stroke-trained net reads a bright blob or
    a closed outline as an oversized pen stroke, not foreign material.
    """
    yy, xx = np.mgrid[0:SIDE, 0:SIDE].astype(np.float64)
    u = (xx - _BOX_LO) / _BOX_SPAN
    v = (yy - _BOX_LO) / _BOX_SPAN
    inside = (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    r = np.hypot(u - 0.5, v - 0.5)
    h_stripes = np.where(np.floor(v * 4) % 2 == 0, 1.0, -1.0)
    v_stripes = np.where(np.floor(u * 4) % 2 == 0, 1.0, -1.0)
    checker = np.where((np.floor(u * 4) + np.floor(v * 4)) % 2 == 0, 1.0, -1.0)
    if cls == 0:
        m = inside
        mod = np.where(np.floor(v * 8) % 2 == 0, 1.0, -1.0)
    elif cls == 1:
        m = inside
        mod = np.where(np.floor(r * 7) % 2 == 0, 1.0, -1.0)
    elif cls == 2:
        m = inside
        mod = np.where(np.floor((u - v + 1.0) * 4) % 2 == 0, 1.0, -1.0)
    elif cls == 3:
        outer = (np.abs(u - 0.5) <= 0.38) & (np.abs(v - 0.5) <= 0.38)
        inner = (np.abs(u - 0.5) <= 0.2) & (np.abs(v - 0.5) <= 0.2)
        m = outer & ~inner
        mod = np.zeros_like(u)
    elif cls == 4:
        m = (r <= 0.38) & (r >= 0.22)
        mod = np.zeros_like(u)
    elif cls == 5:
        m = inside
        mod = h_stripes
    elif cls == 6:
        m = inside
        mod = v_stripes
    elif cls == 7:
        m = inside
        mod = checker
    elif cls == 8:
        m = inside
        mod = np.where(np.floor((u + v) * 4) % 2 == 0, 1.0, -1.0)
    else:
        m = inside
        mod = np.where(np.floor(u * 8) % 2 == 0, 1.0, -1.0)
    shade = rng.uniform(0.85, 1.05)
    gx, gy = rng.uniform(-0.12, 0.12, size=2)
    field = 1.0 + gx * (u - 0.5) + gy * (v - 0.5)  # soft lighting gradient
    return m * 0.62 * shade * field * (1.0 + 0.22 * mod)


def _affine_jitter(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Small random rotation, anisotropic scale, shear, and shift."""
    theta = rng.uniform(-0.14, 0.14)
    sx, sy = rng.uniform(0.92, 1.08, size=2)
    shear = rng.uniform(-0.08, 0.08)
    tx, ty = rng.uniform(-1.3, 1.3, size=2)
    c, s = np.cos(theta), np.sin(theta)
    fwd = np.array([[c, -s], [s, c]]) @ np.array([[sx, shear * sx], [0.0, sy]])
    inv = np.linalg.inv(fwd)
    mid = (SIDE - 1) / 2.0
    yy, xx = np.mgrid[0:SIDE, 0:SIDE].astype(np.float64)
    gx = xx - mid - tx
    gy = yy - mid - ty
    src_x = inv[0, 0] * gx + inv[0, 1] * gy + mid
    src_y = inv[1, 0] * gx + inv[1, 1] * gy + mid
    x0 = np.floor(src_x).astype(int)
    y0 = np.floor(src_y).astype(int)
    fx = src_x - x0
    fy = src_y - y0
    out = np.zeros_like(img)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < SIDE) & (yi >= 0) & (yi < SIDE)
            wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            vals = np.where(ok, img[np.clip(yi, 0, SIDE - 1), np.clip(xi, 0, SIDE - 1)], 0.0)
            out += wgt * vals
    return out


def num_glyph_classes(role: str) -> int:
    if role == "letters":
        return len(_LETTERS)
    if role in ("mnist", "fashion"):
        return 10
    raise ConfigError(f"unknown glyph role {role!r}")


def render_glyph(role: str, cls: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered 28x28 uint8 image of the given class."""
    k = num_glyph_classes(role)
    if not 0 <= cls < k:
        raise ConfigError(f"{role} class must be in [0, {k})")
    if role == "mnist":
        base = _stroke_image(_DIGITS[cls], rng.uniform(1.7, 2.5))
    elif role == "letters":
        base = _stroke_image(_LETTERS[cls], rng.uniform(1.7, 2.5))
    else:
        base = _fill_image(cls, rng)
    img = _affine_jitter(base, rng)
    img = img + rng.normal(0.0, 0.025, size=img.shape)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def make_glyph_split(role: str, n: int, seed: int, split: str):
    """Round-robin balanced labels; one child rng per sample."""
    k = num_glyph_classes(role)
    labels = (np.arange(n) % k).astype(np.int64)
    images = np.empty((n, SIDE, SIDE), dtype=np.uint8)
    for i in range(n):
        images[i] = render_glyph(role, int(labels[i]), rng_for(seed, "glyph", role, split, i))
    return images, labels


def corpus_paths(root, role: str, split: str) -> tuple[Path, Path]:
    prefix = "train" if split == "train" else "t10k"
    d = Path(root) / role
    return d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte"


def write_glyph_corpus(
    root, n_train: int = 4000, n_test: int = 1500, seed: int = 0, roles=GLYPH_ROLES
) -> Path:
    """Emit the full IDX tree under root; existing role dirs are reused."""
    root = Path(root)
    for role in roles:
        img_path, _ = corpus_paths(root, role, "train")
        if img_path.exists():
            continue
        img_path.parent.mkdir(parents=True, exist_ok=True)
        for split, n in (("train", n_train), ("test", n_test)):
            images, labels = make_glyph_split(role, n, seed, split)
            ip, lp = corpus_paths(root, role, split)
            write_idx_images(ip, images)
            write_idx_labels(lp, labels)
    return root
