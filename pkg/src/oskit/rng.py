"""Deterministic seed derivation.

Every random draw in the toolkit flows from a single 64-bit root seed.
Stages derive their own substream by hashing the root seed with a fixed
string label, so adding or reordering stages never shifts another stage's
stream.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_MASK64 = (1 << 64) - 1


def child_seed(seed: int, *labels: object) -> int:
    """Derive a 64-bit child seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update(struct.pack("<Q", seed & _MASK64))
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed: int, *labels: object) -> np.random.Generator:
    """Generator for the substream identified by ``labels`` under ``seed``."""
    return np.random.default_rng(child_seed(seed, *labels))
