"""Slow, loop-based reference implementations used as test oracles."""

import numpy as np


def brute_cross_mask(masks, n, frames, draws=None, beta_d=1.0):
    """Pair (i, j) allowed iff same token, a shared subject id, or draw > beta_d."""
    total = n * frames
    owners = [set() for _ in range(total)]
    for m in masks:
        for tok in range(n):
            if m.bits[tok]:
                owners[m.frame * n + tok].add(m.subject)
    out = np.zeros((total, total), dtype=bool)
    for i in range(total):
        for j in range(total):
            allowed = i == j or bool(owners[i] & owners[j])
            if draws is not None and draws[i, j] > beta_d:
                allowed = True
            out[i, j] = allowed
    return out


def brute_rasterize(box, h, w):
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            cx, cy = (c + 0.5) / w, (r + 0.5) / h
            out[r, c] = box[0] <= cx < box[2] and box[1] <= cy < box[3]
    return out
