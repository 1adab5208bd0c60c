"""Named random streams.

Every random draw in the pipeline flows from a root seed plus a stream
label, so regenerating one artifact never perturbs another.  Labels are
hashed with crc32 (stable across platforms and Python versions).
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *labels) -> np.random.Generator:
    """Generator for the (seed, labels...) stream."""
    keys = [int(seed) & 0xFFFFFFFF]
    for lab in labels:
        if isinstance(lab, str):
            keys.append(zlib.crc32(lab.encode()))
        else:
            keys.append(int(lab) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(keys))
