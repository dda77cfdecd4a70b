"""End-to-end experiment orchestration.

Glues the pieces into the desk-scale protocol: load the IDX corpus, split
the in-distribution classes in half, train one network per regime on the
known half, extract features, fit the detector family, and score the three
difficulty tiers (Gaussian noise, the inter-dataset outlier role, and the
held-out unknown classes). Every stage draws its randomness from the run
seed through fixed labels, so a rerun with the same seed is bit-identical.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import Config
from .data import (
    FeatureTable,
    ImageSet,
    build_eval_set,
    fit_standardizer,
    gaussian_noise_batch,
    load_idx_pair,
    remap_labels,
    split_open_set,
    standardize,
    stratified_indices,
    write_feature_table,
)
from .detectors import METHOD_NAMES, Batch
from .errors import ConfigError, DataError, OskitError
from .fitting import fit_detector
from .glyphs import corpus_paths
from .metrics import ScoreSet
from .nets import Network, init_network, lenetpp, save_checkpoint
from .rng import child_seed, rng_for
from .training import predict_in_batches, train

KNOWN_CLASSES = (0, 1, 2, 3, 4)
TIERS = ("noise", "inter", "intra")


@contextmanager
def stage(name: str):
    """Prefix any toolkit error with the pipeline stage that raised it."""
    try:
        yield
    except OskitError as e:
        raise type(e)(f"stage {name}: {e}") from e


def resolve_root(cfg_root: str) -> Path:
    root = cfg_root or os.environ.get("OSKIT_DATA_DIR", "")
    if not root:
        raise ConfigError("no data root: set 'root' in [data] or OSKIT_DATA_DIR")
    p = Path(root)
    if not p.is_dir():
        raise DataError(f"data root {p} is not a directory")
    return p


def load_role(root: Path, role: str, split: str) -> ImageSet:
    images_path, labels_path = corpus_paths(root, role, split)
    if not images_path.exists() or not labels_path.exists():
        raise DataError(f"missing IDX files for role {role!r} split {split!r} under {root}")
    return load_idx_pair(images_path, labels_path)


@dataclass(frozen=True)
class DeskData:
    """Standardized tensors for one desk-scale experiment."""

    x_train: np.ndarray  # known-class training images
    y_train: np.ndarray  # contiguous ids 0..K-1
    x_test: np.ndarray
    y_test: np.ndarray
    x_intra: np.ndarray  # unknown-class test images
    x_inter: np.ndarray  # outlier-role test images
    x_background: np.ndarray | None
    mean: float
    std: float

    @property
    def num_classes(self) -> int:
        return int(self.y_train.max()) + 1


def prepare_desk_data(cfg: Config, *, with_background: bool, seed: int = 0) -> DeskData:
    """Load, split, subsample, and standardize per the config.

    The standardizer is fit on the known-class training images only;
    every other tensor is mapped through those statistics.
    """
    with stage("load-data"):
        root = resolve_root(cfg.data["root"])
        train_set = load_role(root, cfg.data["dataset"], "train")
        test_set = load_role(root, cfg.data["dataset"], "test")
        inter_set = load_role(root, cfg.data["outliers"], "test")
        bg_set = None
        if with_background:
            if not cfg.data["background"]:
                raise ConfigError("background role not configured in [data]")
            bg_set = load_role(root, cfg.data["background"], "train")

    with stage("split"):
        tr_known, _, mapping = split_open_set(train_set.labels, list(KNOWN_CLASSES))
        te_known, te_unknown, _ = split_open_set(test_set.labels, list(KNOWN_CLASSES))
        if cfg.train["train_n"]:
            sub = stratified_indices(
                train_set.labels[tr_known],
                cfg.train["train_n"],
                rng_for(seed, "train-subsample"),
            )
            tr_known = tr_known[sub]
        mean, std = fit_standardizer(train_set.images[tr_known])
        x_bg = None
        if bg_set is not None:
            n_bg = cfg.train["background_n"]
            if 0 < n_bg < len(bg_set):
                keep = rng_for(seed, "background-subsample").choice(
                    len(bg_set), size=n_bg, replace=False
                )
                bg_images = bg_set.images[np.sort(keep)]
            else:
                bg_images = bg_set.images
            x_bg = standardize(bg_images, mean, std)
        return DeskData(
            x_train=standardize(train_set.images[tr_known], mean, std),
            y_train=remap_labels(train_set.labels[tr_known], mapping),
            x_test=standardize(test_set.images[te_known], mean, std),
            y_test=remap_labels(test_set.labels[te_known], mapping),
            x_intra=standardize(test_set.images[te_unknown], mean, std),
            x_inter=standardize(inter_set.images, mean, std),
            x_background=x_bg,
            mean=mean,
            std=std,
        )


# ------------------------------------------------------------- training


def train_regime(cfg: Config, data: DeskData, *, seed: int):
    """One seeded training run of the configured regime; returns (net, history)."""
    with stage("train"):
        arch = lenetpp(
            num_classes=data.num_classes,
            feature_width=cfg.train["feature_width"],
            widths=cfg.train["widths"],
        )
        net = init_network(arch, seed=seed)
        tc = replace(cfg.train_config(), seed=seed)
        x, y = data.x_train, data.y_train
        if tc.regime == "background_reg":
            if data.x_background is None:
                raise ConfigError("background_reg needs background data")
            x = np.concatenate([x, data.x_background])
            y = np.concatenate([y, np.full(len(data.x_background), -1, dtype=y.dtype)])
        history = train(net, x, y, tc, val=(data.x_test, data.y_test))
        return net, history


def save_stats(path, mean: float, std: float) -> None:
    Path(str(path) + ".stats").write_text(f"mean {mean!r}\nstd {std!r}\n")


def load_stats(path) -> tuple[float, float]:
    p = Path(str(path) + ".stats")
    if not p.exists():
        raise DataError(f"missing standardizer sidecar {p}")
    vals = {}
    for line in p.read_text().splitlines():
        key, _, value = line.partition(" ")
        try:
            vals[key] = float(value)
        except ValueError as e:
            raise DataError(f"bad standardizer sidecar {p}") from e
    if "mean" not in vals or "std" not in vals:
        raise DataError(f"bad standardizer sidecar {p}")
    return vals["mean"], vals["std"]


def save_trained(path, net: Network, data: DeskData) -> None:
    """Checkpoint plus the standardizer sidecar the checkpoint was trained with."""
    save_checkpoint(path, net)
    save_stats(path, data.mean, data.std)


def history_csv(history: list[dict]) -> str:
    lines = ["epoch,lr,loss,top1"]
    for row in history:
        top1 = row.get("val_top1", float("nan"))
        lines.append(f"{row['epoch']},{row['lr']:.6g},{row['loss']:.6f},{top1:.4f}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------- extraction


def extract_tables(net: Network, x: np.ndarray, labels=None):
    """Penultimate features and logits as row-aligned tables."""
    feats, logits = predict_in_batches(net, x)
    return FeatureTable(feats, labels), FeatureTable(logits, labels)


def write_extraction(prefix, net: Network, x: np.ndarray, labels=None):
    features, logits = extract_tables(net, x, labels)
    fpath = Path(f"{prefix}.features.oodf")
    lpath = Path(f"{prefix}.logits.oodf")
    write_feature_table(fpath, features)
    write_feature_table(lpath, logits)
    return fpath, lpath


# ------------------------------------------------------ detector fitting


def fit_detector_suite(
    methods,
    *,
    net: Network,
    data: DeskData,
    seed: int,
    tpr_target: float = 0.95,
    params_by_method: dict[str, dict] | None = None,
) -> dict:
    """Fit every requested method on the training extraction."""
    with stage("fit-detectors"):
        feats, logits = predict_in_batches(net, data.x_train)
        out = {}
        for method in methods:
            if method not in METHOD_NAMES:
                raise ConfigError(f"unknown detector method {method!r}")
            params = dict((params_by_method or {}).get(method, {}))
            out[method] = fit_detector(
                method,
                logits=np.asarray(logits, dtype=np.float64),
                features=np.asarray(feats, dtype=np.float64),
                labels=data.y_train,
                x=data.x_train,
                net=net,
                seed=child_seed(seed, "fit", method),
                tpr_target=tpr_target,
                params=params,
            )
        return out


# ------------------------------------------------------------ evaluation


def _batch_for(net: Network, x: np.ndarray) -> Batch:
    feats, logits = predict_in_batches(net, x)
    return Batch(
        x=x,
        features=np.asarray(feats, dtype=np.float64),
        logits=np.asarray(logits, dtype=np.float64),
    )


def evaluate_tier(
    detectors: dict,
    net: Network,
    data: DeskData,
    tier: str,
    *,
    runs: int,
    seed: int,
    n_each: int,
) -> dict[str, list[ScoreSet]]:
    """Score every detector over seeded evaluation draws of one tier."""
    with stage(f"evaluate-{tier}"):
        if tier == "noise":
            out_pool = None
        elif tier == "inter":
            out_pool = data.x_inter
        elif tier == "intra":
            out_pool = data.x_intra
        else:
            raise ConfigError(f"unknown tier {tier!r}")
        if runs < 1:
            raise ConfigError("runs must be >= 1")
        results: dict[str, list[ScoreSet]] = {m: [] for m in detectors}
        for run in range(runs):
            tier_seed = child_seed(seed, "tier", tier)
            pool_size = n_each if out_pool is None else len(out_pool)
            draw = build_eval_set(data.y_test, pool_size, n_each, n_each, tier_seed, run=run)
            x_in = data.x_test[draw.in_indices]
            y_in = data.y_test[draw.in_indices]
            if out_pool is None:
                noise = gaussian_noise_batch(
                    n_each, data.x_test.shape[1:], child_seed(tier_seed, "draw", run)
                )
                x_out = noise[draw.out_indices]
            else:
                x_out = out_pool[draw.out_indices]
            batch_in = _batch_for(net, x_in)
            batch_out = _batch_for(net, x_out)
            for method, det in detectors.items():
                results[method].append(
                    ScoreSet(
                        in_scores=np.asarray(det.score(batch_in), dtype=np.float64),
                        out_scores=np.asarray(det.score(batch_out), dtype=np.float64),
                        in_correct=np.asarray(det.predict(batch_in)) == y_in,
                    )
                )
        return results
