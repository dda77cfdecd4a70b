"""Dataset I/O and sampling: IDX images, feature tables, splits, eval draws.

IDX files follow the classic big-endian layout (magic 0x00000803 for u8
image cubes, 0x00000801 for u8 label vectors). Feature tables use the
little-endian OODF container: magic "OODF", u32 version, u32 n, u32 d,
u8 has_labels, then row-major values and optional i32 labels. Version 1
stores f32 values (the on-disk FeatureTable format); version 2 stores f64
and is used inside detector bundles where bit-exact state matters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .rng import rng_for

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
OODF_MAGIC = b"OODF"

#: Sentinel label marking background samples; never a valid class index.
BACKGROUND = -1


# ------------------------------------------------------------------- IDX


def read_idx_images(path: str | Path) -> np.ndarray:
    """Load a u8 image cube [n, h, w] from an IDX file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if len(raw) < 16:
        raise DataError(f"{path}: truncated IDX header")
    magic, n, h, w = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{path}: bad IDX image magic 0x{magic:08x}")
    if len(raw) != 16 + n * h * w:
        raise DataError(f"{path}: truncated IDX payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, h, w).copy()


def read_idx_labels(path: str | Path) -> np.ndarray:
    """Load a u8 label vector [n] from an IDX file, as int64."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if len(raw) < 8:
        raise DataError(f"{path}: truncated IDX header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DataError(f"{path}: bad IDX label magic 0x{magic:08x}")
    if len(raw) != 8 + n:
        raise DataError(f"{path}: truncated IDX payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx_images(path: str | Path, images: np.ndarray) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise DataError("images must be a uint8 [n, h, w] array")
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError("labels must be 1-D")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise DataError("IDX labels must fit in u8")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.astype(np.uint8).tobytes())


@dataclass(frozen=True)
class ImageSet:
    """u8 images with aligned integer labels."""

    images: np.ndarray  # uint8 [n, h, w]
    labels: np.ndarray  # int64 [n]

    def __len__(self) -> int:
        return self.images.shape[0]


def load_idx_pair(images_path: str | Path, labels_path: str | Path) -> ImageSet:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}"
        )
    return ImageSet(images, labels)


# --------------------------------------------------------- normalization


def fit_standardizer(images_u8: np.ndarray) -> tuple[float, float]:
    """Scalar mean/std of the training split after scaling to [0, 1]."""
    x = images_u8.astype(np.float64) / 255.0
    mean = float(x.mean())
    std = float(x.std())
    if std < 1e-8:
        raise DataError("training images have zero variance")
    return mean, std


def standardize(
    images_u8: np.ndarray, mean: float, std: float, dtype=np.float32
) -> np.ndarray:
    """Scale u8 images to [0, 1], standardize, add the channel axis."""
    x = images_u8.astype(np.float64) / 255.0
    x = (x - mean) / std
    return x[:, None, :, :].astype(dtype)


def gaussian_noise_batch(
    n: int, shape: tuple[int, ...], seed: int, label: str = "noise"
) -> np.ndarray:
    """i.i.d. standard-normal inputs in standardized space, float32."""
    rng = rng_for(seed, label)
    return rng.standard_normal((n, *shape)).astype(np.float32)


# ---------------------------------------------------------- FeatureTable


@dataclass(frozen=True)
class FeatureTable:
    """Dense real-valued feature rows with optional integer labels."""

    values: np.ndarray  # float32 [n, d]
    labels: np.ndarray | None = None  # int32 [n]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise DataError("feature values must be 2-D")
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int32)
            if lab.shape != (v.shape[0],):
                raise DataError("labels must align with feature rows")
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def write_feature_table(path: str | Path, table: FeatureTable) -> None:
    """Write the on-disk FeatureTable format (OODF version 1, f32)."""
    _write_oodf(path, table.values.astype(np.float32), table.labels, version=1)


def read_feature_table(path: str | Path) -> FeatureTable:
    values, labels = _read_oodf(path)
    return FeatureTable(values.astype(np.float32), labels)


def oodf_bytes(
    values: np.ndarray, labels: np.ndarray | None = None, version: int = 2
) -> bytes:
    """Serialize one table to OODF bytes (v1 stores f32, v2 stores f64)."""
    if version not in (1, 2):
        raise DataError(f"unsupported OODF version {version}")
    values = np.asarray(values)
    if values.ndim != 2:
        raise DataError("feature tables must be 2-D")
    n, d = values.shape
    if d == 0:
        raise DataError("refusing to write a zero-width feature table")
    dtype = "<f4" if version == 1 else "<f8"
    parts = [
        OODF_MAGIC,
        struct.pack("<IIIB", version, n, d, 1 if labels is not None else 0),
        np.ascontiguousarray(values, dtype=dtype).tobytes(),
    ]
    if labels is not None:
        parts.append(np.ascontiguousarray(labels, dtype="<i4").tobytes())
    return b"".join(parts)


def _write_oodf(
    path: str | Path, values: np.ndarray, labels: np.ndarray | None, version: int
) -> None:
    with open(path, "wb") as f:
        f.write(oodf_bytes(values, labels, version))


def _read_oodf(path_or_bytes) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(path_or_bytes, (bytes, bytearray, memoryview)):
        raw = bytes(path_or_bytes)
        name = "<bytes>"
    else:
        path = Path(path_or_bytes)
        name = str(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise DataError(f"cannot read {path}: {e}") from e
    if len(raw) < 17 or raw[:4] != OODF_MAGIC:
        raise DataError(f"{name}: not an OODF table")
    version, n, d, has_labels = struct.unpack("<IIIB", raw[4:17])
    if version not in (1, 2):
        raise DataError(f"{name}: unsupported OODF version {version}")
    itemsize = 4 if version == 1 else 8
    need = 17 + n * d * itemsize + (4 * n if has_labels else 0)
    if len(raw) != need:
        raise DataError(f"{name}: truncated OODF payload")
    dtype = "<f4" if version == 1 else "<f8"
    values = np.frombuffer(raw, dtype=dtype, count=n * d, offset=17).reshape(n, d)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{name}: non-finite feature values")
    labels = None
    if has_labels:
        labels = np.frombuffer(
            raw, dtype="<i4", count=n, offset=17 + n * d * itemsize
        ).copy()
    return values.copy(), labels


# ---------------------------------------------------------------- splits


def split_open_set(
    labels: np.ndarray, known_classes: list[int]
) -> tuple[np.ndarray, np.ndarray, dict[int, int]]:
    """Partition indices into known/unknown classes.

    Known classes are remapped to contiguous ids 0..K-1 in sorted order and
    the mapping is returned; unknown samples keep their original labels.
    """
    labels = np.asarray(labels)
    known = sorted(set(int(k) for k in known_classes))
    if not known:
        raise DataError("known_classes must be non-empty")
    mapping = {orig: new for new, orig in enumerate(known)}
    mask = np.isin(labels, known)
    return np.flatnonzero(mask), np.flatnonzero(~mask), mapping


def remap_labels(labels: np.ndarray, mapping: dict[int, int]) -> np.ndarray:
    out = np.empty(labels.shape, dtype=np.int64)
    for i, lab in enumerate(labels):
        out[i] = mapping[int(lab)]
    return out


def stratified_indices(labels: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n indices stratified by label: per-class counts differ by <= 1.

    Sampling is without replacement; classes with too few samples raise.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    k = classes.size
    base, extra = divmod(n, k)
    bump = set(rng.permutation(k)[:extra].tolist())
    picks = []
    for ci, c in enumerate(classes):
        want = base + (1 if ci in bump else 0)
        pool = np.flatnonzero(labels == c)
        if pool.size < want:
            raise DataError(
                f"class {c} has {pool.size} samples, need {want} for stratified draw"
            )
        picks.append(rng.choice(pool, size=want, replace=False))
    return np.sort(np.concatenate(picks))


@dataclass(frozen=True)
class EvalSet:
    """Index draw for one evaluation run: in-pool and out-pool rows."""

    in_indices: np.ndarray
    out_indices: np.ndarray


def build_eval_set(
    in_labels: np.ndarray,
    out_pool_size: int,
    n_in: int,
    n_out: int,
    seed: int,
    run: int = 0,
) -> EvalSet:
    """Stratified in-distribution draw plus uniform out-distribution draw."""
    rng = rng_for(seed, "eval", run)
    in_idx = stratified_indices(in_labels, n_in, rng)
    if n_out > out_pool_size:
        raise DataError(f"out pool has {out_pool_size} rows, need {n_out}")
    out_idx = np.sort(rng.choice(out_pool_size, size=n_out, replace=False))
    return EvalSet(in_idx, out_idx)
