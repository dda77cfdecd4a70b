"""Minimal differentiable network engine.

Layers: 2-D convolution (im2col + GEMM), 2x2 max-pooling, ReLU, leaky ReLU,
flatten, dense. A network is an explicit layer list with a parameter store; forward
exposes both the penultimate feature vector (the input to the final dense
head) and the logits, and backward can inject an extra gradient at the
feature node so losses may regularize feature geometry directly.

Architectures serialize to a small line-oriented descriptor text which is
embedded in checkpoints, so a checkpoint is self-contained: magic "OSKN",
u32 version, length-prefixed descriptor, then all parameters as f64
little-endian in layer order (weights before biases).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError
from .rng import rng_for

CHECKPOINT_MAGIC = b"OSKN"
CHECKPOINT_VERSION = 1


# ------------------------------------------------------------ descriptors


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class MaxPool:
    pass  # fixed 2x2, stride 2, floor semantics


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Leaky:
    slope: float = 0.1


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    width: int


Layer = Conv | MaxPool | Relu | Leaky | Flatten | Dense


@dataclass(frozen=True)
class Architecture:
    """Input shape plus ordered layer list; the last layer must be Dense."""

    input_shape: tuple[int, ...]  # (C, H, W) for images, (D,) for vectors
    layers: tuple[Layer, ...]
    normalize: tuple[float, float] | None = None  # training-split mean/std

    def __post_init__(self):
        if not self.layers or not isinstance(self.layers[-1], Dense):
            raise DataError("architecture must end in a dense classifier head")

    @property
    def num_classes(self) -> int:
        return self.layers[-1].width


def _shapes_through(arch: Architecture) -> list[tuple[int, ...]]:
    """Activation shape after each layer (excluding the batch axis)."""
    shape = arch.input_shape
    out = []
    for layer in arch.layers:
        if isinstance(layer, Conv):
            if len(shape) != 3:
                raise DataError("conv needs a (C, H, W) input")
            c, h, w = shape
            oh = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
            ow = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
            if oh <= 0 or ow <= 0:
                raise DataError("conv output would be empty")
            shape = (layer.filters, oh, ow)
        elif isinstance(layer, MaxPool):
            c, h, w = shape
            if h < 2 or w < 2:
                raise DataError("maxpool needs at least 2x2 input")
            shape = (c, h // 2, w // 2)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, Dense):
            if len(shape) != 1:
                raise DataError("dense needs a flat input (add flatten)")
            shape = (layer.width,)
        out.append(shape)
    return out


def feature_dim(arch: Architecture) -> int:
    """Width of the penultimate activation (input to the final dense head)."""
    shapes = _shapes_through(arch)
    if len(arch.layers) == 1:
        return int(np.prod(arch.input_shape))
    prev = shapes[-2]
    if len(prev) != 1:
        raise DataError("final dense head must be fed a flat vector")
    return prev[0]


def param_count(arch: Architecture) -> int:
    total = 0
    shape = arch.input_shape
    for layer, out_shape in zip(arch.layers, _shapes_through(arch)):
        if isinstance(layer, Conv):
            total += layer.filters * shape[0] * layer.kernel**2 + layer.filters
        elif isinstance(layer, Dense):
            total += shape[0] * layer.width + layer.width
        shape = out_shape
    return total


# --------------------------------------------------------- descriptor text


def arch_to_text(arch: Architecture) -> str:
    lines = []
    if len(arch.input_shape) == 3:
        c, h, w = arch.input_shape
        lines.append(f"input image {c} {h} {w}")
    elif len(arch.input_shape) == 1:
        lines.append(f"input vector {arch.input_shape[0]}")
    else:
        raise DataError("input must be (C, H, W) or (D,)")
    for layer in arch.layers:
        if isinstance(layer, Conv):
            lines.append(f"conv {layer.filters} {layer.kernel} {layer.stride} {layer.pad}")
        elif isinstance(layer, MaxPool):
            lines.append("maxpool")
        elif isinstance(layer, Relu):
            lines.append("relu")
        elif isinstance(layer, Leaky):
            lines.append(f"leaky {layer.slope!r}")
        elif isinstance(layer, Flatten):
            lines.append("flatten")
        elif isinstance(layer, Dense):
            lines.append(f"dense {layer.width}")
    if arch.normalize is not None:
        mean, std = arch.normalize
        lines.append(f"normalize {mean!r} {std!r}")
    return "\n".join(lines) + "\n"


def arch_from_text(text: str) -> Architecture:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("input "):
        raise DataError("descriptor must start with an input line")
    toks = lines[0].split()
    if toks[1] == "image" and len(toks) == 5:
        input_shape = (int(toks[2]), int(toks[3]), int(toks[4]))
    elif toks[1] == "vector" and len(toks) == 3:
        input_shape = (int(toks[2]),)
    else:
        raise DataError(f"bad input line: {lines[0]!r}")
    layers: list[Layer] = []
    normalize = None
    for ln in lines[1:]:
        toks = ln.split()
        kind = toks[0]
        try:
            if kind == "conv" and len(toks) == 5:
                layers.append(Conv(int(toks[1]), int(toks[2]), int(toks[3]), int(toks[4])))
            elif kind == "maxpool" and len(toks) == 1:
                layers.append(MaxPool())
            elif kind == "relu" and len(toks) == 1:
                layers.append(Relu())
            elif kind == "leaky" and len(toks) == 2:
                layers.append(Leaky(float(toks[1])))
            elif kind == "flatten" and len(toks) == 1:
                layers.append(Flatten())
            elif kind == "dense" and len(toks) == 2:
                layers.append(Dense(int(toks[1])))
            elif kind == "normalize" and len(toks) == 3:
                normalize = (float(toks[1]), float(toks[2]))
            else:
                raise DataError(f"bad descriptor line: {ln!r}")
        except ValueError as e:
            raise DataError(f"bad descriptor line: {ln!r}") from e
    return Architecture(input_shape, tuple(layers), normalize)


# ---------------------------------------------------------------- network


@dataclass
class Network:
    arch: Architecture
    params: list[dict[str, np.ndarray]] = field(repr=False)
    dtype: np.dtype = np.float32

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes


def init_network(arch: Architecture, seed: int, dtype=np.float32) -> Network:
    """Kaiming-uniform fan-in init for weights, zero biases, seeded."""
    rng = rng_for(seed, "init")
    params: list[dict[str, np.ndarray]] = []
    shape = arch.input_shape
    for layer, out_shape in zip(arch.layers, _shapes_through(arch)):
        if isinstance(layer, Conv):
            fan_in = shape[0] * layer.kernel**2
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (layer.filters, shape[0], layer.kernel, layer.kernel))
            params.append({"w": w.astype(dtype), "b": np.zeros(layer.filters, dtype=dtype)})
        elif isinstance(layer, Dense):
            fan_in = shape[0]
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, (shape[0], layer.width))
            params.append({"w": w.astype(dtype), "b": np.zeros(layer.width, dtype=dtype)})
        else:
            params.append({})
        shape = out_shape
    return Network(arch, params, np.dtype(dtype))


def lenetpp(
    num_classes: int,
    feature_width: int = 2,
    widths: tuple[int, int, int] = (32, 64, 128),
    input_shape: tuple[int, int, int] = (1, 28, 28),
) -> Architecture:
    """Blocks of [conv5x5, conv5x5, maxpool] feeding a narrow feature layer.

    Activations are leaky: with a width-2 funnel, plain ReLUs let the whole
    feature layer die on bad seeds (loss pinned at ln(num_classes)).
    """
    layers: list[Layer] = []
    c = input_shape[0]
    for width in widths:
        layers += [Conv(width, 5, 1, 2), Leaky(), Conv(width, 5, 1, 2), Leaky(), MaxPool()]
        c = width
    layers += [Flatten(), Dense(feature_width), Dense(num_classes)]
    return Architecture(input_shape, tuple(layers))


# ------------------------------------------------------------ conv pieces


def _im2col(xp: np.ndarray, k: int, s: int, oh: int, ow: int) -> np.ndarray:
    """[n, c, k, k, oh, ow] patch tensor from a padded input."""
    n, c = xp.shape[:2]
    col = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            col[:, :, i, j] = xp[:, :, i : i + s * oh : s, j : j + s * ow : s]
    return col


def _col2im(dcol: np.ndarray, xp_shape, k: int, s: int, oh: int, ow: int) -> np.ndarray:
    dxp = np.zeros(xp_shape, dtype=dcol.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += dcol[:, :, i, j]
    return dxp


# ---------------------------------------------------------------- forward


def forward(
    net: Network, x: np.ndarray, want_cache: bool = False
):
    """Run the network; returns (features, logits[, cache]).

    ``features`` is the activation entering the final dense head.
    """
    a = np.ascontiguousarray(x, dtype=net.dtype)
    expect = net.arch.input_shape
    if a.shape[1:] != expect:
        raise DataError(f"input shape {a.shape[1:]} does not match {expect}")
    cache: list[tuple] = []
    features = None
    last = len(net.arch.layers) - 1
    for li, layer in enumerate(net.arch.layers):
        if li == last:
            if a.ndim != 2:
                raise DataError("final dense head must be fed a flat vector")
            features = a
        if isinstance(layer, Conv):
            p = net.params[li]
            k, s, pad = layer.kernel, layer.stride, layer.pad
            if pad:
                xp = np.pad(a, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
            else:
                xp = a
            n = a.shape[0]
            oh = (xp.shape[2] - k) // s + 1
            ow = (xp.shape[3] - k) // s + 1
            col = _im2col(xp, k, s, oh, ow).reshape(n, -1, oh * ow)
            w2 = p["w"].reshape(layer.filters, -1)
            out = np.matmul(w2, col) + p["b"][None, :, None]
            a_next = out.reshape(n, layer.filters, oh, ow)
            if want_cache:
                cache.append((xp.shape, col, (k, s, oh, ow)))
        elif isinstance(layer, MaxPool):
            n, c, h, w = a.shape
            oh, ow = h // 2, w // 2
            v = a[:, :, : 2 * oh, : 2 * ow]
            v4 = (
                v.reshape(n, c, oh, 2, ow, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, oh, ow, 4)
            )
            am = v4.argmax(axis=-1)
            a_next = np.take_along_axis(v4, am[..., None], axis=-1)[..., 0]
            if want_cache:
                cache.append((a.shape, am))
        elif isinstance(layer, Relu):
            a_next = np.maximum(a, 0)
            if want_cache:
                cache.append((a > 0,))
        elif isinstance(layer, Leaky):
            mask = a > 0
            a_next = np.where(mask, a, a * a.dtype.type(layer.slope))
            if want_cache:
                cache.append((mask,))
        elif isinstance(layer, Flatten):
            a_next = a.reshape(a.shape[0], -1)
            if want_cache:
                cache.append((a.shape,))
        elif isinstance(layer, Dense):
            p = net.params[li]
            a_next = a @ p["w"] + p["b"]
            if want_cache:
                cache.append((a,))
        a = a_next
    logits = a
    if features is None:  # single-layer net: head sees the raw input
        features = np.ascontiguousarray(x, dtype=net.dtype).reshape(x.shape[0], -1)
    if want_cache:
        return features, logits, cache
    return features, logits


def backward(
    net: Network,
    cache: list[tuple],
    d_logits: np.ndarray,
    d_features_extra: np.ndarray | None = None,
):
    """Backpropagate; returns (param_grads, d_input).

    ``d_features_extra`` is added to the gradient flowing into the
    penultimate feature node (used by feature-magnitude regularizers).
    """
    grads: list[dict[str, np.ndarray]] = [dict() for _ in net.arch.layers]
    d = np.asarray(d_logits, dtype=net.dtype)
    last = len(net.arch.layers) - 1
    for li in range(last, -1, -1):
        layer = net.arch.layers[li]
        if isinstance(layer, Conv):
            xp_shape, col, (k, s, oh, ow) = cache[li]
            p = net.params[li]
            n, f = d.shape[0], layer.filters
            dout = d.reshape(n, f, oh * ow)
            grads[li]["b"] = dout.sum(axis=(0, 2)).astype(net.dtype)
            dw2 = np.tensordot(dout, col, axes=([0, 2], [0, 2]))
            grads[li]["w"] = dw2.reshape(p["w"].shape)
            w2 = p["w"].reshape(f, -1)
            dcol = np.matmul(w2.T, dout)  # [n, c*k*k, oh*ow]
            c = xp_shape[1]
            dxp = _col2im(dcol.reshape(n, c, k, k, oh, ow), xp_shape, k, s, oh, ow)
            pad = layer.pad
            if pad:
                d = dxp[:, :, pad:-pad, pad:-pad]
            else:
                d = dxp
        elif isinstance(layer, MaxPool):
            in_shape, am = cache[li]
            n, c, h, w = in_shape
            oh, ow = h // 2, w // 2
            dv4 = np.zeros((n, c, oh, ow, 4), dtype=net.dtype)
            np.put_along_axis(dv4, am[..., None], d[..., None], axis=-1)
            dv = (
                dv4.reshape(n, c, oh, ow, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, 2 * oh, 2 * ow)
            )
            dfull = np.zeros(in_shape, dtype=net.dtype)
            dfull[:, :, : 2 * oh, : 2 * ow] = dv
            d = dfull
        elif isinstance(layer, Relu):
            (mask,) = cache[li]
            d = d * mask
        elif isinstance(layer, Leaky):
            (mask,) = cache[li]
            d = np.where(mask, d, d * d.dtype.type(layer.slope))
        elif isinstance(layer, Flatten):
            (in_shape,) = cache[li]
            d = d.reshape(in_shape)
        elif isinstance(layer, Dense):
            (a_in,) = cache[li]
            p = net.params[li]
            grads[li]["w"] = a_in.T @ d
            grads[li]["b"] = d.sum(axis=0)
            d = d @ p["w"].T
            if li == last and d_features_extra is not None:
                d = d + np.asarray(d_features_extra, dtype=net.dtype)
    return grads, d


# ---------------------------------------------------------- flat params


def flat_params(net: Network) -> np.ndarray:
    pieces = []
    for p in net.params:
        if p:
            pieces.append(p["w"].ravel())
            pieces.append(p["b"].ravel())
    return np.concatenate(pieces) if pieces else np.zeros(0, dtype=net.dtype)


def set_flat_params(net: Network, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=net.dtype)
    if flat.size != param_count(net.arch):
        raise DataError(
            f"parameter vector has {flat.size} entries, "
            f"architecture needs {param_count(net.arch)}"
        )
    pos = 0
    for p in net.params:
        if p:
            for key in ("w", "b"):
                n = p[key].size
                p[key] = flat[pos : pos + n].reshape(p[key].shape).astype(net.dtype)
                pos += n


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path: str | Path, net: Network) -> None:
    desc = arch_to_text(net.arch).encode("utf-8")
    params = flat_params(net).astype("<f8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(desc)))
        f.write(desc)
        f.write(params.tobytes())


def load_checkpoint(path: str | Path, dtype=np.float32) -> Network:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, desc_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 12 + desc_len:
        raise DataError(f"{path}: truncated descriptor")
    arch = arch_from_text(raw[12 : 12 + desc_len].decode("utf-8"))
    want = param_count(arch)
    payload = raw[12 + desc_len :]
    if len(payload) != 8 * want:
        raise DataError(
            f"{path}: parameter payload has {len(payload) // 8} values, expected {want}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    net = init_network(arch, seed=0, dtype=dtype)
    set_flat_params(net, flat)
    return net


def check_finite_params(net: Network) -> None:
    for p in net.params:
        for arr in p.values():
            if not np.all(np.isfinite(arr)):
                raise NumericError("non-finite network parameters")
