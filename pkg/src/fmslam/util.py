"""Small deterministic helpers shared across modules."""

from __future__ import annotations

import numpy as np


def hash01(seed: int, *streams: np.ndarray) -> np.ndarray:
    """Counter-based hash of integer arrays to uniform floats in [0, 1).

    splitmix64 finalizer over the combined streams; fully vectorized and
    independent of evaluation order, so batched computations that use it
    are permutation-invariant.
    """
    with np.errstate(over="ignore"):
        acc = np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15)
        acc = np.broadcast_to(acc, np.broadcast_shapes(*[np.shape(s) for s in streams]) or ()).copy() \
            if streams else np.uint64(acc)
        for s in streams:
            x = np.asarray(s).astype(np.uint64)
            acc = acc ^ (x + np.uint64(0x9E3779B97F4A7C15) + (acc << np.uint64(6)) + (acc >> np.uint64(2)))
            acc = acc * np.uint64(0xBF58476D1CE4E5B9)
        acc = acc ^ (acc >> np.uint64(31))
        acc = acc * np.uint64(0x94D049BB133111EB)
        acc = acc ^ (acc >> np.uint64(29))
    return (acc >> np.uint64(11)).astype(np.float64) / float(1 << 53)
