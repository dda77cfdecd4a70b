#!/usr/bin/env python3
"""Desk-scale benchmark driver.

Equivalent to `oskit reproduce-mnist` but convenient to edit: regimes,
detector subset, and sizes are plain variables below. Generates the glyph
corpus on first use when no data root is configured.
"""

import argparse
import sys
import tempfile
from pathlib import Path

from oskit.reproduce import reproduce_desk


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="benchmark_out")
    ap.add_argument("--data-root", default="")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-n", type=int, default=1500)
    ap.add_argument("--epochs", type=int, default=14)
    ap.add_argument("--n-each", type=int, default=400)
    ap.add_argument("--quick", action="store_true", help="1 run, small draws")
    args = ap.parse_args()

    root = args.data_root or str(Path(tempfile.gettempdir()) / "oskit_glyphs")
    runs = 1 if args.quick else args.runs
    n_each = 150 if args.quick else args.n_each
    reproduce_desk(
        out_dir=args.out,
        data_root=root,
        runs=runs,
        seed=args.seed,
        train_n=args.train_n,
        epochs=args.epochs,
        n_each=n_each,
        make_corpus=True,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
