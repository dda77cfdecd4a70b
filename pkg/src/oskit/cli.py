"""Command-line front end.

Subcommands cover the full experiment loop: train, extract, fit-detector,
evaluate, plot, and the one-shot reproduce-mnist driver. Exit codes: 2 for
configuration problems, 3 for data problems, 4 for numeric failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .data import read_feature_table, read_idx_labels
from .detectors import METHOD_NAMES
from .errors import ConfigError, DataError, NumericError
from .fitting import fit_detector, load_detector
from .glyphs import write_glyph_corpus
from .metrics import build_report, osc_curve
from .nets import load_checkpoint
from .reproduce import delong_matrix_csv, per_run_csv
from .pipeline import (
    TIERS,
    evaluate_tier,
    history_csv,
    load_stats,
    prepare_desk_data,
    save_trained,
    train_regime,
    write_extraction,
)
from .plots import render_boundary_grid, render_curves, render_scatter, roc_curve
from .rng import child_seed
from .training import predict_in_batches
from .tuning import tune_ocsvm, tune_odin, tune_openmax


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


# ------------------------------------------------------------- commands


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    data = prepare_desk_data(
        cfg, with_background=cfg.train["regime"] == "background_reg", seed=cfg.train["seed"]
    )
    net, history = train_regime(cfg, data, seed=cfg.train["seed"])
    save_trained(args.checkpoint, net, data)
    log_path = args.log or str(Path(args.checkpoint).with_suffix(".csv"))
    _write(log_path, history_csv(history))
    print(f"checkpoint: {args.checkpoint}")
    print(f"log: {log_path} ({len(history)} epochs)")


def cmd_extract(args) -> None:
    net = load_checkpoint(args.checkpoint)
    mean, std = load_stats(args.checkpoint)
    from .data import read_idx_images, standardize

    images = read_idx_images(args.data)
    labels = read_idx_labels(args.labels) if args.labels else None
    if labels is not None and labels.shape[0] != images.shape[0]:
        raise DataError("image/label count mismatch")
    x = standardize(images, mean, std)
    fpath, lpath = write_extraction(args.out, net, x, labels)
    print(f"features: {fpath}")
    print(f"logits: {lpath}")


def _tune_params(args, method, logits, features, labels, x, net) -> dict:
    """Grid-tune on Gaussian-noise outliers; returns the chosen params."""
    from .data import gaussian_noise_batch

    seed = args.seed
    if method == "odin":
        if net is None or x is None:
            raise ConfigError("odin tuning needs --checkpoint and --data")
        noise = gaussian_noise_batch(min(len(x), 500), x.shape[1:], child_seed(seed, "tune-noise"))
        res = tune_odin(net, x[: noise.shape[0]], noise)
    elif method == "openmax":
        if labels is None:
            raise ConfigError("openmax tuning needs labels")
        if net is not None and x is not None:
            noise = gaussian_noise_batch(min(len(x), 500), x.shape[1:], child_seed(seed, "tune-noise"))
            _, noise_logits = predict_in_batches(net, noise)
        else:
            rng_shape = (min(len(logits), 500), logits.shape[1])
            noise_logits = gaussian_noise_batch(rng_shape[0], rng_shape[1:], child_seed(seed, "tune-noise"))
        res = tune_openmax(logits, labels, logits, np.asarray(noise_logits, dtype=np.float64))
    elif method == "ocsvm":
        if features is None:
            raise ConfigError("ocsvm tuning needs --features")
        if net is not None and x is not None:
            noise = gaussian_noise_batch(min(len(x), 500), x.shape[1:], child_seed(seed, "tune-noise"))
            noise_feats, _ = predict_in_batches(net, noise)
        else:
            noise_feats = gaussian_noise_batch(
                min(len(features), 500), features.shape[1:], child_seed(seed, "tune-noise")
            )
        res = tune_ocsvm(features, features, np.asarray(noise_feats, dtype=np.float64))
    else:
        raise ConfigError(f"method {method!r} has no tunable hyperparameters")
    print(f"tuned {method}: {res.params} (noise auroc {res.auroc:.3f})")
    return res.params


def cmd_fit_detector(args) -> None:
    method = args.method
    logits = features = labels = None
    if args.logits:
        t = read_feature_table(args.logits)
        logits = np.asarray(t.values, dtype=np.float64)
        if t.labels is not None:
            labels = np.asarray(t.labels, dtype=np.int64)
    if args.features:
        t = read_feature_table(args.features)
        features = np.asarray(t.values, dtype=np.float64)
        if labels is None and t.labels is not None:
            labels = np.asarray(t.labels, dtype=np.int64)
    if args.labels:
        labels = np.asarray(read_idx_labels(args.labels), dtype=np.int64)
    net = x = None
    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
        if args.data:
            from .data import read_idx_images, standardize

            mean, std = load_stats(args.checkpoint)
            x = standardize(read_idx_images(args.data), mean, std)
    params = {}
    if args.config:
        params = dict(load_config(args.config).detectors.get(method, {}))
        if method == "ocsvm" and params.get("gamma") == 0.0:
            params.pop("gamma")  # 0 means per-dimension default
    if args.tune_noise:
        params = _tune_params(args, method, logits, features, labels, x, net)
    det = fit_detector(
        method,
        logits=logits,
        features=features,
        labels=labels,
        x=x,
        net=net,
        seed=args.seed,
        tpr_target=args.tpr,
        params=params,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    det.to_bundle(args.out)
    print(f"bundle: {args.out} (delta {det.delta!r})")


def _load_bundles(detectors_dir, net) -> dict:
    d = Path(detectors_dir)
    paths = sorted(d.glob("*.oskb"))
    if not paths:
        raise DataError(f"no detector bundles (*.oskb) under {d}")
    out = {}
    for p in paths:
        det = load_detector(p, net=net)
        out[det.method] = det
    return out


def cmd_evaluate(args) -> None:
    cfg = load_config(args.config)
    net = load_checkpoint(args.checkpoint)
    data = prepare_desk_data(cfg, with_background=False, seed=cfg.train["seed"])
    detectors = _load_bundles(args.detectors, net)
    tiers = TIERS if args.eval_tier == "all" else (args.eval_tier,)
    n_each = cfg.eval["n_each"]
    runs_map = {}
    for tier in tiers:
        tier_runs = evaluate_tier(
            detectors, net, data, tier, runs=args.runs, seed=args.seed, n_each=n_each
        )
        for method, sets in tier_runs.items():
            runs_map[(args.regime, method, tier)] = sets
    report = build_report(runs_map, tiers=tiers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = (
        f"# seed {args.seed}, runs {args.runs} (runs vary the evaluation draw; "
        "fitted bundles are fixed)\n"
    )
    (out / "report.csv").write_text(report.render_csv())
    (out / "report.txt").write_text(header + report.render_text())
    (out / "runs.csv").write_text(per_run_csv(runs_map))
    (out / "delong.csv").write_text(delong_matrix_csv(runs_map, tiers))
    print(header + report.render_text())
    print(f"wrote {out}/report.csv, report.txt, runs.csv, delong.csv")


def cmd_plot(args) -> None:
    if args.kind == "boundary":
        net = load_checkpoint(args.checkpoint)
        det = load_detector(args.detector, net=net)
        bounds = tuple(float(v) for v in args.bounds.split(","))
        if len(bounds) != 4:
            raise ConfigError("--bounds must be xmin,xmax,ymin,ymax")
        doc = render_boundary_grid(
            net, det, bounds, resolution=args.resolution, title=det.method
        )
    elif args.kind == "scatter":
        table = read_feature_table(args.features)
        if table.labels is None:
            raise DataError("scatter needs labels embedded in the features table")
        outliers = read_feature_table(args.outliers).values if args.outliers else None
        doc = render_scatter(table.values, table.labels, outliers)
    else:  # roc | osc
        cfg = load_config(args.config)
        net = load_checkpoint(args.checkpoint)
        data = prepare_desk_data(cfg, with_background=False, seed=cfg.train["seed"])
        detectors = _load_bundles(args.detectors, net)
        tier_runs = evaluate_tier(
            detectors, net, data, args.tier, runs=1, seed=args.seed, n_each=cfg.eval["n_each"]
        )
        curves, labels = [], []
        for method in sorted(tier_runs):
            s = tier_runs[method][0]
            if args.kind == "roc":
                curves.append(roc_curve(s.in_scores, s.out_scores))
            else:
                curves.append(osc_curve(s.in_scores, s.in_correct, s.out_scores))
            labels.append(method)
        doc = render_curves(curves, labels=labels, title=f"{args.tier} tier")
    _write(args.out, doc)
    print(f"wrote {args.out}")


def cmd_reproduce(args) -> None:
    from .reproduce import reproduce_desk

    reproduce_desk(
        out_dir=args.out,
        data_root=args.data_root,
        runs=args.runs,
        seed=args.seed,
        train_n=args.train_n,
        epochs=args.epochs,
        n_each=args.n_each,
        make_corpus=args.make_corpus,
    )


def cmd_make_corpus(args) -> None:
    root = write_glyph_corpus(args.out, n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    print(f"corpus: {root}")


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oskit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one regime from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--log", default="")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("extract", help="extract features and logits to OODF tables")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="IDX images file")
    e.add_argument("--labels", default="", help="IDX labels file (optional)")
    e.add_argument("--out", required=True, help="output prefix")
    e.set_defaults(fn=cmd_extract)

    f = sub.add_parser("fit-detector", help="fit and serialize one detector")
    f.add_argument("--method", required=True, choices=METHOD_NAMES)
    f.add_argument("--features", default="")
    f.add_argument("--logits", default="")
    f.add_argument("--labels", default="", help="IDX labels to override table labels")
    f.add_argument("--checkpoint", default="")
    f.add_argument("--data", default="", help="IDX images (odin perturbation, tuning)")
    f.add_argument("--config", default="", help="config with [detector.*] overrides")
    f.add_argument("--tune-noise", action="store_true")
    f.add_argument("--tpr", type=float, default=0.95)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_fit_detector)

    v = sub.add_parser("evaluate", help="score detector bundles over seeded draws")
    v.add_argument("--config", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--detectors", required=True, help="directory of *.oskb bundles")
    v.add_argument("--eval-tier", default="all", choices=("all",) + TIERS)
    v.add_argument("--runs", type=int, default=5)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--regime", default="model", help="row label for the report")
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_evaluate)

    g = sub.add_parser("plot", help="render SVG figures")
    g.add_argument("--kind", required=True, choices=("boundary", "scatter", "roc", "osc"))
    g.add_argument("--checkpoint", default="")
    g.add_argument("--detector", default="", help="bundle path (boundary)")
    g.add_argument("--detectors", default="", help="bundle directory (roc/osc)")
    g.add_argument("--config", default="")
    g.add_argument("--features", default="", help="OODF table (scatter)")
    g.add_argument("--outliers", default="", help="OODF table (scatter overlay)")
    g.add_argument("--bounds", default="-3,3,-3,3")
    g.add_argument("--resolution", type=int, default=120)
    g.add_argument("--tier", default="inter", choices=TIERS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_plot)

    r = sub.add_parser("reproduce-mnist", help="full desk-scale reproduction")
    r.add_argument("--out", required=True)
    r.add_argument("--data-root", default="", help="IDX corpus root (or OSKIT_DATA_DIR)")
    r.add_argument("--runs", type=int, default=5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--train-n", type=int, default=1500)
    r.add_argument("--epochs", type=int, default=14)
    r.add_argument("--n-each", type=int, default=400)
    r.add_argument(
        "--make-corpus",
        action="store_true",
        help="generate the synthetic glyph corpus under the data root if missing",
    )
    r.set_defaults(fn=cmd_reproduce)

    c = sub.add_parser("make-corpus", help="write the synthetic glyph corpus")
    c.add_argument("--out", required=True)
    c.add_argument("--n-train", type=int, default=4000)
    c.add_argument("--n-test", type=int, default=1500)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_make_corpus)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
