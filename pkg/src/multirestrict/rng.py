"""Seeded random streams.

Every random draw in the package goes through :func:`stream`, which builds a
counter-based Philox generator keyed by the run seed and a tuple of labels.
There is no module-level RNG state.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _label_words(labels):
    h = hashlib.sha256(repr(tuple(labels)).encode()).digest()
    return [int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed, *labels):
    """Independent generator for ``(seed, labels)``; same inputs give the same draws."""
    seed = int(seed) & _MASK64
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *_label_words(labels)])
    return np.random.Generator(np.random.Philox(ss))
