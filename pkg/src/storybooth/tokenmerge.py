"""Cross-frame token merging and early negative unmerging.

After the joint attention layer each token is blended with its best match
in another frame: ``merged = (1 - alpha) * src + alpha * src[match]``, where
the match is the argmax of the head-averaged attention weights with every
same-frame block zeroed. Positive alpha pulls matched tokens together;
negative alpha pushes them apart. A schedule assigns alpha per timestep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .errors import UsageError

SELF = -1


@dataclass(frozen=True, eq=False)
class MergeGate:
    """Attention weights as (B, N, B, N) with same-frame blocks set to 0."""

    values: np.ndarray

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def tokens(self) -> int:
        return self.values.shape[1]

    def flat(self) -> np.ndarray:
        b, n = self.frames, self.tokens
        return np.ascontiguousarray(self.values.reshape(b * n, b * n))


@dataclass(frozen=True, eq=False)
class MergeMatch:
    """Per source token, the flat index of its match (or ``SELF``) and its gate value."""

    target_index: np.ndarray
    score: np.ndarray
    frames: int
    tokens: int

    def resolved(self) -> np.ndarray:
        """Target indices with ``SELF`` replaced by the token's own index."""
        idx = np.arange(self.target_index.size)
        return np.where(self.target_index == SELF, idx, self.target_index)


def build_merge_gate(weights, frames: int, tokens: int) -> MergeGate:
    w = np.asarray(weights, dtype=np.float64)
    total = frames * tokens
    if frames < 1 or tokens < 1 or w.shape != (total, total):
        raise UsageError(f"weights of shape {w.shape} are not ({frames}*{tokens}) square")
    h = w.reshape(frames, tokens, frames, tokens).copy()
    for i in range(frames):
        h[i, :, i, :] = 0.0
    return MergeGate(h)


def match_tokens(gate: MergeGate, membership: np.ndarray | None = None) -> MergeMatch:
    """Argmax of the gate row for every source token.

    Ties go to the lowest flat index. Rows with no positive entry (a single
    frame, or a token isolated by strict bounding) map to ``SELF``.
    ``membership`` (per-token subject bitsets) optionally restricts matches
    to tokens sharing a subject with the source.
    """
    flat = gate.flat()
    if membership is not None:
        words = np.asarray(membership, dtype=np.uint64)
        if words.shape != (flat.shape[0],):
            raise UsageError("membership must have one word per token")
        flat = np.where((words[:, None] & words[None, :]) != 0, flat, 0.0)
    targets, scores = kernels.gated_argmax(np.ascontiguousarray(flat), gate.frames, gate.tokens)
    return MergeMatch(targets, scores, gate.frames, gate.tokens)


def merge_tokens(src, match: MergeMatch, alpha: float) -> np.ndarray:
    """Blend each token with its match; ``SELF`` tokens pass through unchanged.

    ``src`` may be (B, N, C) or (BN, C); the result has the same shape.
    """
    if not -1.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [-1, 1], got {alpha}")
    src = np.asarray(src, dtype=np.float64)
    b, n = match.frames, match.tokens
    if src.ndim == 2 and src.shape[0] == b * n:
        flat = src
    elif src.ndim == 3 and src.shape[:2] == (b, n):
        flat = src.reshape(b * n, -1)
    else:
        raise UsageError(f"src of shape {src.shape} does not match {b}x{n} tokens")
    if alpha == 0.0:
        return src.copy()
    out = flat.copy()
    has = match.target_index != SELF
    out[has] = (1.0 - alpha) * flat[has] + alpha * flat[match.target_index[has]]
    return out.reshape(src.shape)


@dataclass(frozen=True)
class MergeWindow:
    """alpha applies for timesteps t_low <= t <= t_high.

    Adjacent windows may share an endpoint; :func:`alpha_at` gives a shared
    endpoint to the higher (earlier in denoising) window.
    """

    t_high: float
    t_low: float
    alpha: float

    def __post_init__(self):
        for name in ("t_high", "t_low", "alpha"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.t_high > self.t_low:
            raise UsageError(f"window needs t_high > t_low, got ({self.t_high}, {self.t_low})")
        if not -1.0 <= self.alpha <= 1.0:
            raise UsageError(f"alpha must lie in [-1, 1], got {self.alpha}")

    def contains(self, t: float) -> bool:
        return self.t_low <= t <= self.t_high


@dataclass(frozen=True)
class MergeSchedule:
    windows: tuple[MergeWindow, ...] = ()

    def __post_init__(self):
        ws = tuple(sorted(self.windows, key=lambda w: -w.t_high))
        for upper, lower in zip(ws, ws[1:]):
            if lower.t_high > upper.t_low:
                raise UsageError(f"merge windows overlap: {upper} and {lower}")
        object.__setattr__(self, "windows", ws)

    @classmethod
    def from_config(cls, items: Iterable[dict]) -> "MergeSchedule":
        try:
            return cls(tuple(MergeWindow(float(d["t_high"]), float(d["t_low"]), float(d["alpha"]))
                             for d in items))
        except (KeyError, TypeError) as exc:
            raise UsageError(f"bad merge schedule entry: {exc!r}") from exc

    def to_config(self) -> list[dict]:
        return [{"t_high": w.t_high, "t_low": w.t_low, "alpha": w.alpha} for w in self.windows]

    def without_negative(self) -> "MergeSchedule":
        return MergeSchedule(tuple(w for w in self.windows if w.alpha >= 0))


DEFAULT_SCHEDULE = MergeSchedule((MergeWindow(1000, 950, -0.5), MergeWindow(950, 600, 0.4)))


def alpha_at(schedule: MergeSchedule, t: float) -> float:
    """alpha at timestep ``t``; windows are scanned from the highest down."""
    if t < 0:
        raise UsageError(f"timestep must be non-negative, got {t}")
    for window in schedule.windows:
        if window.contains(t):
            return window.alpha
    return 0.0


__all__ = [
    "SELF", "MergeGate", "MergeMatch", "MergeWindow", "MergeSchedule", "DEFAULT_SCHEDULE",
    "build_merge_gate", "match_tokens", "merge_tokens", "alpha_at",
]
