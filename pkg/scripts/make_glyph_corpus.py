#!/usr/bin/env python3
"""Generate the synthetic glyph corpus as IDX files.

Writes three roles under the output root: mnist (stroke digits),
letters (uppercase strokes, background/open-set role), and fashion
(filled shapes, inter-dataset outlier role). Existing role directories
are left untouched so reruns are cheap.
"""

import argparse
import sys

from oskit.glyphs import write_glyph_corpus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="corpus root directory")
    ap.add_argument("--n-train", type=int, default=4000)
    ap.add_argument("--n-test", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    root = write_glyph_corpus(args.out, args.n_train, args.n_test, args.seed)
    print(f"corpus ready under {root}")
    print(f"export OSKIT_DATA_DIR={root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
