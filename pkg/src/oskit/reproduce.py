"""One-command desk-scale reproduction.

Trains the three loss regimes on the synthetic glyph corpus, fits every
detector behind each trained net, scores all three outlier tiers over
several independent runs, and writes the report tables plus decision-region
and feature-scatter figures. Each run retrains from a fresh seed and
redraws the evaluation sets, so run-to-run spread reflects both sources
of variance.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import load_config
from .data import gaussian_noise_batch
from .detectors import METHOD_NAMES
from .errors import ConfigError
from .metrics import auroc, build_report, delong_test, osc_curve
from .nets import feature_dim
from .pipeline import (
    TIERS,
    evaluate_tier,
    fit_detector_suite,
    prepare_desk_data,
    save_trained,
    train_regime,
)
from .plots import render_boundary_grid, render_scatter, scaled_bounds
from .rng import child_seed
from .training import REGIMES, predict_in_batches

REGIME_ORDER = ("cross_entropy", "one_vs_rest", "background_reg")

DATASET_ROLE = "mnist"
OUTLIER_ROLE = "fashion"
BACKGROUND_ROLE = "letters"


def _config_text(regime: str, root: str, train_n: int, epochs: int, n_each: int) -> str:
    lines = [
        "[data]",
        f"root = {root}",
        f"dataset = {DATASET_ROLE}",
        f"outliers = {OUTLIER_ROLE}",
    ]
    if regime == "background_reg":
        lines.append(f"background = {BACKGROUND_ROLE}")
    lines += [
        "",
        "[train]",
        f"regime = {regime}",
        f"epochs = {epochs}",
        f"train_n = {train_n}",
        "",
        "[eval]",
        f"n_each = {n_each}",
    ]
    return "\n".join(lines) + "\n"


def per_run_csv(runs_map: dict) -> str:
    """Per-draw AUROC/AUOSC rows, one line per (cell, run)."""
    lines = ["regime,method,tier,run,auroc,auosc,normalized_auosc"]
    for (regime, method, tier), sets in sorted(runs_map.items()):
        for i, s in enumerate(sets):
            curve = osc_curve(s.in_scores, s.in_correct, s.out_scores)
            a = auroc(s.in_scores, s.out_scores)
            lines.append(
                f"{regime},{method},{tier},{i},{a:.6f},{curve.auosc:.6f},"
                f"{curve.normalized_auosc:.6f}"
            )
    return "\n".join(lines) + "\n"


def delong_matrix_csv(runs_map: dict, tiers=TIERS) -> str:
    """Pairwise DeLong p-values on pooled draws, one block per tier."""
    lines = ["tier,method_a,method_b,auroc_a,auroc_b,p_value"]
    for tier in tiers:
        pooled = {}
        for (regime, method, t), sets in sorted(runs_map.items()):
            if t != tier:
                continue
            pooled[f"{regime}/{method}"] = (
                np.concatenate([s.in_scores for s in sets]),
                np.concatenate([s.out_scores for s in sets]),
            )
        names = sorted(pooled)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                res = delong_test(*pooled[a], *pooled[b])
                lines.append(
                    f"{tier},{a},{b},{res.auc_a:.6f},{res.auc_b:.6f},{res.p:.6g}"
                )
    return "\n".join(lines) + "\n"


def _figures(out: Path, regime: str, net, detectors, data, seed: int, n_each: int) -> None:
    if feature_dim(net.arch) != 2:
        return  # decision-region grids only make sense for a 2-D feature plane
    figdir = out / "figures"
    figdir.mkdir(parents=True, exist_ok=True)
    feats_tr, _ = predict_in_batches(net, data.x_train)
    feats_te, _ = predict_in_batches(net, data.x_test)
    noise = gaussian_noise_batch(
        min(n_each, 300), data.x_test.shape[1:], child_seed(seed, "figure-noise")
    )
    feats_noise, _ = predict_in_batches(net, noise)
    doc = render_scatter(feats_te, data.y_test, feats_noise, title=f"{regime} features")
    (figdir / f"scatter_{regime}.svg").write_text(doc)
    bounds = scaled_bounds(feats_tr, 3.0)
    for method, det in detectors.items():
        doc = render_boundary_grid(
            net, det, bounds, resolution=120, title=f"{regime}: {method}"
        )
        (figdir / f"boundary_{regime}_{method}.svg").write_text(doc)


def reproduce_desk(
    out_dir,
    data_root: str = "",
    runs: int = 5,
    seed: int = 0,
    train_n: int = 1500,
    epochs: int = 14,
    n_each: int = 400,
    make_corpus: bool = False,
    methods=METHOD_NAMES,
    regimes=REGIME_ORDER,
    log=print,
) -> Path:
    """Run the full benchmark; returns the output directory."""
    for regime in regimes:
        if regime not in REGIMES:
            raise ConfigError(f"unknown regime {regime!r}")
    out = Path(out_dir)
    (out / "configs").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    if make_corpus:
        from .glyphs import write_glyph_corpus

        import os

        root = data_root or os.environ.get("OSKIT_DATA_DIR", "")
        if not root:
            raise ConfigError("no data root: pass --data-root or set OSKIT_DATA_DIR")
        Path(root).mkdir(parents=True, exist_ok=True)
        write_glyph_corpus(root)

    runs_map: dict = {}
    for regime in regimes:
        cfg_path = out / "configs" / f"{regime}.cfg"
        cfg_path.write_text(_config_text(regime, data_root, train_n, epochs, n_each))
        cfg = load_config(cfg_path)
        for r in range(runs):
            seed_r = child_seed(seed, "run", r)
            data = prepare_desk_data(
                cfg, with_background=regime == "background_reg", seed=seed_r
            )
            net, history = train_regime(cfg, data, seed=seed_r)
            top1 = history[-1].get("val_top1", float("nan")) if history else float("nan")
            log(f"{regime} run {r}: top1 {top1:.4f}")
            detectors = fit_detector_suite(
                methods, net=net, data=data, seed=seed_r, tpr_target=cfg.eval["tpr"]
            )
            for tier in TIERS:
                res = evaluate_tier(
                    detectors, net, data, tier, runs=1, seed=seed_r, n_each=n_each
                )
                for method, sets in res.items():
                    runs_map.setdefault((regime, method, tier), []).extend(sets)
            if r == 0:
                save_trained(out / "checkpoints" / f"{regime}.osknet", net, data)
                _figures(out, regime, net, detectors, data, seed, n_each)

    report = build_report(runs_map)
    header = (
        f"# seed {seed}, runs {runs} (each run retrains with a fresh seed "
        "and redraws the evaluation sets)\n"
    )
    (out / "report.csv").write_text(report.render_csv())
    (out / "report.txt").write_text(header + report.render_text())
    (out / "runs.csv").write_text(per_run_csv(runs_map))
    (out / "delong.csv").write_text(delong_matrix_csv(runs_map))
    log(header + report.render_text())
    log(f"wrote {out}/report.csv, report.txt, runs.csv, delong.csv")
    return out
