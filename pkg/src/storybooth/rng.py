"""Counter-based keyed random streams.

Every random draw in the package comes from a Philox stream whose key is
derived from a tuple of integers (seed, timestep, layer, scope, ...). The
same key always yields the same stream, independent of call order, so mask
draws can be regenerated for any (step, layer) without replaying history.
"""

from __future__ import annotations

import hashlib

import numpy as np

SCOPE_INTRA = 1
SCOPE_CROSS = 2
SCOPE_WEIGHTS = 3
SCOPE_NOISE = 4
SCOPE_PROMPT = 5


def _word(value: int) -> int:
    # SeedSequence only accepts non-negative entropy words
    return int(value) & 0xFFFFFFFFFFFFFFFF


def keyed_generator(*key: int) -> np.random.Generator:
    """Return a Philox-backed generator for ``key``."""
    seq = np.random.SeedSequence([_word(k) for k in key])
    return np.random.Generator(np.random.Philox(seq))


def uniform_matrix(shape, *key: int) -> np.ndarray:
    """Uniform draws on [0, 1) for the given key."""
    return keyed_generator(*key).random(shape)


def text_key(*parts: str) -> int:
    """Stable 63-bit integer for a tuple of strings (platform independent)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") >> 1
