"""Bounded self-attention, per frame and jointly across frames.

The binary mask enters the scores as an additive log term: allowed pairs
add log(1) = 0, disallowed pairs add -inf, which the masked softmax kernel
resolves by excluding them from both the row max and the normaliser. The
same mask is applied to every head; the returned weights are the mean over
heads, which is what cross-frame token matching consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from . import kernels
from .errors import NumericError, UsageError
from .masks import AttentionMask, SubjectMask


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    """Q/K/V projections (C x d) and an optional output projection (d x C)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    heads: int = 1
    w_o: np.ndarray | None = None

    def __post_init__(self):
        shapes = {np.shape(self.w_q), np.shape(self.w_k), np.shape(self.w_v)}
        if len(shapes) != 1 or len(np.shape(self.w_q)) != 2:
            raise UsageError(f"w_q, w_k, w_v must share one 2-D shape, got {shapes}")
        if self.heads < 1 or self.dim % self.heads:
            raise UsageError(f"projection width {self.dim} not divisible by heads={self.heads}")
        if self.w_o is None and self.dim != self.channels:
            raise UsageError("without w_o the projection width must equal the channel count")
        if self.w_o is not None and np.shape(self.w_o) != (self.dim, self.channels):
            raise UsageError(f"w_o must be ({self.dim}, {self.channels})")

    @property
    def channels(self) -> int:
        return np.shape(self.w_q)[0]

    @property
    def dim(self) -> int:
        return np.shape(self.w_q)[1]

    @property
    def d_k(self) -> int:
        return self.dim // self.heads

    @classmethod
    def random(cls, channels: int, heads: int = 1, seed: int = 0, output: bool = False):
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(channels)
        ws = [rng.normal(0.0, scale, (channels, channels)) for _ in range(4)]
        return cls(ws[0], ws[1], ws[2], heads, ws[3] if output else None)


@dataclass(frozen=True, eq=False)
class AttentionResult:
    output: np.ndarray
    weights: np.ndarray


def _mask_array(mask, n: int) -> np.ndarray | None:
    if mask is None:
        return None
    bits = mask.as_uint8() if isinstance(mask, AttentionMask) else np.ascontiguousarray(mask, dtype=np.uint8)
    if bits.shape != (n, n):
        raise UsageError(f"mask shape {bits.shape} does not match scores ({n}, {n})")
    return bits


def masked_softmax(scores, mask=None) -> np.ndarray:
    """Row softmax of ``scores + log(mask)``; masked entries come out exactly 0."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise UsageError(f"scores must be 2-D, got shape {scores.shape}")
    if mask is not None:
        bits = mask.as_uint8() if isinstance(mask, AttentionMask) else np.ascontiguousarray(mask, dtype=np.uint8)
        if bits.shape != scores.shape:
            raise UsageError(f"mask shape {bits.shape} does not match scores {scores.shape}")
    else:
        bits = None
    try:
        return kernels.masked_softmax(scores, bits)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _finite(stage: str, arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise NumericError(stage)


def _attend(x: np.ndarray, proj: ProjectionSet, mask) -> AttentionResult:
    """Multi-head attention over the token rows of ``x`` (M x C)."""
    m = x.shape[0]
    bits = _mask_array(mask, m)
    h, dk = proj.heads, proj.d_k
    q = x @ proj.w_q
    k = x @ proj.w_k
    v = x @ proj.w_v
    _finite("projection", q)
    _finite("projection", k)
    _finite("projection", v)
    scale = 1.0 / math.sqrt(dk)
    out = np.empty((m, proj.dim))
    weights = np.zeros((m, m))
    for head in range(h):
        cols = slice(head * dk, (head + 1) * dk)
        scores = np.ascontiguousarray((q[:, cols] @ k[:, cols].T) * scale)
        _finite("scores", scores)
        a = kernels.masked_softmax(scores, bits)
        out[:, cols] = a @ v[:, cols]
        weights += a
    weights /= h
    if proj.w_o is not None:
        out = out @ proj.w_o
    _finite("output", out)
    return AttentionResult(out, weights)


def bounded_self_attention(features, proj: ProjectionSet, mask: AttentionMask | None) -> AttentionResult:
    """Attention within one frame (``features`` is N x C, ``mask`` N x N)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != proj.channels:
        raise UsageError(f"features must be (N, {proj.channels}), got {x.shape}")
    _finite("input", x)
    return _attend(x, proj, mask)


def cross_frame_bounded_attention(features, proj: ProjectionSet, mask: AttentionMask | None) -> AttentionResult:
    """Joint attention over all frames.

    ``features`` (B x N x C) is flattened frame-major to BN tokens, attended
    under the BN x BN ``mask`` and reshaped back. The weights stay BN x BN.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != proj.channels:
        raise UsageError(f"features must be (B, N, {proj.channels}), got {x.shape}")
    _finite("input", x)
    b, n, _ = x.shape
    res = _attend(x.reshape(b * n, -1), proj, mask)
    return AttentionResult(res.output.reshape(b, n, -1), res.weights)


def oracle_attention(q, k, v, mask=None) -> np.ndarray:
    """Brute-force single-head masked attention, one pair at a time.

    Independent reference for the kernels: plain Python loops, the only
    stabilisation is subtracting the row max over allowed entries.
    """
    q = np.asarray(q, dtype=float).tolist()
    k = np.asarray(k, dtype=float).tolist()
    v = np.asarray(v, dtype=float)
    allowed = np.ones((len(q), len(k)), dtype=bool) if mask is None else np.asarray(
        mask.bits if isinstance(mask, AttentionMask) else mask, dtype=bool)
    allowed = allowed.tolist()
    d = len(q[0]) if q else 1
    scale = 1.0 / math.sqrt(d)
    out = np.zeros((len(q), v.shape[1]))
    for i, qi in enumerate(q):
        scores = {}
        for j, kj in enumerate(k):
            if allowed[i][j]:
                scores[j] = sum(a * b for a, b in zip(qi, kj)) * scale
        top = max(scores.values())
        expd = {j: math.exp(s - top) for j, s in scores.items()}
        total = sum(expd.values())
        for j, e in expd.items():
            out[i] += (e / total) * v[j]
    return out


def leakage_fraction(weights, masks: Sequence[SubjectMask]) -> dict[Hashable, float]:
    """Mean attention mass each subject's tokens send to other subjects' tokens.

    ``weights`` is either BN x BN (cross-frame, frame-major) or N x N for a
    single frame, in which case ``masks`` must all come from that frame.
    Target tokens that also belong to the source subject are not counted as
    "other", so fully bounded attention always scores exactly 0.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not masks:
        return {}
    n = masks[0].bits.size
    total = w.shape[0]
    if w.shape != (total, total) or total % n:
        raise UsageError(f"weights {w.shape} do not tile into {n}-token frames")
    frames = total // n
    if frames == 1:
        if len({m.frame for m in masks}) > 1:
            raise UsageError("single-frame weights need masks from one frame")
        offset = {m.frame: 0 for m in masks}
    else:
        offset = {m.frame: m.frame for m in masks}
    member: dict[Hashable, np.ndarray] = {}
    for m in masks:
        if m.bits.size != n:
            raise UsageError("masks must share one grid")
        if not 0 <= offset[m.frame] < frames:
            raise UsageError(f"mask frame {m.frame} outside weights")
        sel = member.setdefault(m.subject, np.zeros(total, dtype=bool))
        base = offset[m.frame] * n
        sel[base:base + n] |= m.bits
    result = {}
    for subject, own in member.items():
        other = np.zeros(total, dtype=bool)
        for s, sel in member.items():
            if s != subject:
                other |= sel
        other &= ~own
        if not other.any():
            result[subject] = 0.0
            continue
        mass = w[own][:, other].sum(axis=1)
        result[subject] = float(np.clip(mass.mean(), 0.0, 1.0))
    return result
