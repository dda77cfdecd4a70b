"""Open-set and out-of-distribution detection toolkit.

A self-contained reproduction kit: a small from-scratch differentiable
network engine, seven detection methods behind one accept/reject interface,
threshold-free metrics with significance testing, and deterministic SVG
figure rendering.
"""

__version__ = "0.1.0"

from .config import Config, load_config
from .data import (
    FeatureTable,
    gaussian_noise_batch,
    load_idx_pair,
    read_feature_table,
    write_feature_table,
)
from .detectors import METHOD_NAMES, Batch, apply_decision_rule, calibrate_threshold
from .errors import ConfigError, DataError, NumericError, OskitError
from .fitting import fit_detector, load_detector
from .metrics import auroc, build_report, delong_test, osc_curve, roc_points
from .nets import (
    Architecture,
    Network,
    forward,
    init_network,
    lenetpp,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import evaluate_tier, fit_detector_suite, prepare_desk_data, train_regime
from .plots import render_boundary_grid, render_curves, render_scatter
from .rng import child_seed, rng_for
from .training import TrainConfig, train

__all__ = [
    "Architecture",
    "Batch",
    "Config",
    "ConfigError",
    "DataError",
    "FeatureTable",
    "METHOD_NAMES",
    "Network",
    "NumericError",
    "OskitError",
    "TrainConfig",
    "apply_decision_rule",
    "auroc",
    "build_report",
    "calibrate_threshold",
    "child_seed",
    "delong_test",
    "evaluate_tier",
    "fit_detector",
    "fit_detector_suite",
    "forward",
    "gaussian_noise_batch",
    "init_network",
    "lenetpp",
    "load_checkpoint",
    "load_config",
    "load_detector",
    "load_idx_pair",
    "osc_curve",
    "prepare_desk_data",
    "read_feature_table",
    "render_boundary_grid",
    "render_curves",
    "render_scatter",
    "rng_for",
    "roc_points",
    "save_checkpoint",
    "train",
    "train_regime",
    "write_feature_table",
    "__version__",
]
