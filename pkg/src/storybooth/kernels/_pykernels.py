"""Pure numpy versions of the compiled kernels (same contracts)."""

from __future__ import annotations

import numpy as np


def masked_softmax(scores, allowed=None):
    scores = np.asarray(scores, dtype=np.float64)
    if allowed is None:
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    allowed = np.asarray(allowed).astype(bool, copy=False)
    if allowed.shape != scores.shape:
        raise ValueError("mask shape does not match scores")
    empty = ~allowed.any(axis=1)
    if empty.any():
        raise ValueError(f"row {int(np.flatnonzero(empty)[0])} has no allowed entries")
    s = np.where(allowed, scores, -np.inf)
    row_max = s.max(axis=1, keepdims=True)
    e = np.exp(s - row_max)
    return e / e.sum(axis=1, keepdims=True)


def region_mask(membership, draws=None, threshold=1.0):
    membership = np.asarray(membership, dtype=np.uint64)
    n = membership.shape[0]
    out = (membership[:, None] & membership[None, :]) != 0
    if draws is not None:
        draws = np.asarray(draws, dtype=np.float64)
        if draws.shape != (n, n):
            raise ValueError("draws shape does not match membership")
        out |= draws > threshold
    np.fill_diagonal(out, True)
    return out.astype(np.uint8)


def gated_argmax(weights, frames, tokens):
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.shape[0]
    if weights.shape != (n, n) or frames * tokens != n:
        raise ValueError("weights must be (frames*tokens) square")
    frame_of = np.arange(n) // tokens
    gated = np.where(frame_of[:, None] == frame_of[None, :], 0.0, weights)
    # argmax returns the first maximal index, i.e. lowest flat index on ties
    idx = gated.argmax(axis=1)
    best = gated[np.arange(n), idx]
    targets = np.where(best > 0.0, idx, -1).astype(np.int64)
    scores = np.where(best > 0.0, best, 0.0)
    return targets, scores
