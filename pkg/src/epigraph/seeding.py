"""Deterministic named substreams from a single top-level seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed, *labels) -> np.random.Generator:
    """A generator derived from (seed, labels...).

    Labels hash through crc32 so the derivation is stable across runs,
    platforms and processes.  Integer labels pass through unchanged, so
    per-epoch or per-pair streams can mix names and counters.
    """
    keys = [int(seed)]
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            keys.append(int(lab))
        else:
            keys.append(zlib.crc32(str(lab).encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(keys))


def subseed(seed, *labels) -> int:
    """A derived integer seed (for APIs that take seeds, not generators)."""
    return int(substream(seed, *labels).integers(0, 2 ** 63 - 1))
