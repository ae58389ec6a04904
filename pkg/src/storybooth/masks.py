"""Token-level subject masks and bounded self-attention masks.

Boxes from a plan are rasterized onto the token grid of an attention layer.
From the per-subject token sets we build binary attention masks: a token
pair is allowed when both tokens lie in the same subject's region, when a
seeded uniform draw exceeds the dropout threshold ``beta_d``, or when it is
the token itself. The intra-frame mask is N x N for one frame; the
cross-frame mask is BN x BN over all frames (frame-major token order), where
"same subject" matches by subject id across frames.

Frames are numbered from 0 here; plan frame ``index`` i maps to frame i - 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from . import kernels
from .errors import UsageError
from .plan import MAX_SUBJECTS, BoundingBox, StoryboardPlan
from .rng import SCOPE_CROSS, SCOPE_INTRA, uniform_matrix

DEFAULT_BETA_D = 0.9


@dataclass(frozen=True)
class TokenGrid:
    height: int
    width: int
    frame_count: int = 1

    def __post_init__(self):
        if min(self.height, self.width, self.frame_count) < 1:
            raise UsageError(f"grid dimensions must be positive: {self}")

    @property
    def tokens(self) -> int:
        return self.height * self.width

    def with_frames(self, frame_count: int) -> "TokenGrid":
        return TokenGrid(self.height, self.width, frame_count)


@dataclass(frozen=True, eq=False)
class SubjectMask:
    """Row-major occupancy of subject ``subject`` in frame ``frame``."""

    frame: int
    subject: Hashable
    bits: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != bool:
            if not np.isin(bits, (0, 1)).all():
                raise UsageError("subject mask entries must be 0 or 1")
            bits = bits.astype(bool)
        bits = bits.reshape(-1)
        if bits.size != self.shape[0] * self.shape[1]:
            raise UsageError(f"mask has {bits.size} entries, grid {self.shape} needs {self.shape[0] * self.shape[1]}")
        if not bits.any():
            raise UsageError(f"empty mask for subject {self.subject!r} in frame {self.frame}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def grid2d(self) -> np.ndarray:
        return self.bits.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, SubjectMask):
            return NotImplemented
        return (self.frame == other.frame and self.subject == other.subject
                and self.shape == other.shape and np.array_equal(self.bits, other.bits))

    __hash__ = None


@dataclass(frozen=True)
class DropoutParams:
    beta_d: float = DEFAULT_BETA_D
    seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta_d <= 1.0:
            raise UsageError(f"beta_d must lie in [0, 1], got {self.beta_d}")


@dataclass(frozen=True, eq=False)
class AttentionMask:
    """Binary gate on self-attention; ``bits[i, j]`` lets token i see token j."""

    scope: str
    bits: np.ndarray
    frame: int | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != bool:
            if not np.isin(bits, (0, 1)).all():
                raise UsageError("attention mask entries must be 0 or 1")
            bits = bits.astype(bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise UsageError(f"attention mask must be square, got {bits.shape}")
        if not bits.diagonal().all():
            raise UsageError("attention mask diagonal must be all ones")
        if self.scope not in ("intra", "cross"):
            raise UsageError(f"unknown mask scope {self.scope!r}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def size(self) -> int:
        return self.bits.shape[0]

    def as_uint8(self) -> np.ndarray:
        return np.ascontiguousarray(self.bits, dtype=np.uint8)

    @classmethod
    def full(cls, n: int, scope: str = "cross") -> "AttentionMask":
        return cls(scope, np.ones((n, n), dtype=bool))

    @classmethod
    def identity(cls, n: int, scope: str = "cross") -> "AttentionMask":
        return cls(scope, np.eye(n, dtype=bool))

    def __eq__(self, other):
        if not isinstance(other, AttentionMask):
            return NotImplemented
        return self.scope == other.scope and np.array_equal(self.bits, other.bits)

    __hash__ = None


def _axis_cells(lo: float, hi: float, count: int) -> np.ndarray:
    centers = (np.arange(count) + 0.5) / count
    hit = (centers >= lo) & (centers < hi)
    if not hit.any():
        # snap outward: take the cell containing the box centre
        mid = 0.5 * (lo + hi)
        hit[min(int(mid * count), count - 1)] = True
    return hit


def rasterize_box(box: BoundingBox, grid: TokenGrid, frame: int, subject: Hashable) -> SubjectMask:
    """Token (r, c) is set iff its cell centre lies in [x0, x1) x [y0, y1).

    Boxes too thin to contain a centre along an axis snap to the cell that
    holds the box centre, so the result is never empty.
    """
    cols = _axis_cells(box.x0, box.x1, grid.width)
    rows = _axis_cells(box.y0, box.y1, grid.height)
    return SubjectMask(frame, subject, np.outer(rows, cols), (grid.height, grid.width))


def _overlap(src: int, dst: int) -> np.ndarray:
    """(dst, src) boolean matrix: do the unit-interval cells overlap?"""
    i = np.arange(src)[None, :]
    j = np.arange(dst)[:, None]
    return (i * dst < (j + 1) * src) & (j * src < (i + 1) * dst)


def resample_mask(mask: SubjectMask, source: TokenGrid, target: TokenGrid) -> SubjectMask:
    """Carry a mask to another attention resolution.

    A target cell is set when any source cell it overlaps is set, which keeps
    small subjects alive when downsampling and is nearest-neighbour for
    integer upsampling.
    """
    if source.frame_count != target.frame_count:
        raise UsageError("source and target grids must share frame_count")
    if mask.shape != (source.height, source.width):
        raise UsageError(f"mask shape {mask.shape} does not match source grid")
    if (source.height, source.width) == (target.height, target.width):
        return mask
    rows = _overlap(source.height, target.height).astype(np.int64)
    cols = _overlap(source.width, target.width).astype(np.int64)
    out = rows @ mask.grid2d().astype(np.int64) @ cols.T > 0
    return SubjectMask(mask.frame, mask.subject, out, (target.height, target.width))


def plan_masks(plan: StoryboardPlan, grid: TokenGrid) -> list[SubjectMask]:
    """Rasterize every layout of every frame of ``plan`` onto ``grid``."""
    if grid.frame_count != plan.prompt.frame_count:
        raise UsageError(
            f"grid has {grid.frame_count} frames, plan has {plan.prompt.frame_count}"
        )
    return [
        rasterize_box(layout.box, grid, frame.index - 1, layout.subject_id)
        for frame in plan.frames
        for layout in frame.layouts
    ]


def subject_bits(masks: Sequence[SubjectMask]) -> dict[Hashable, int]:
    """Assign each distinct subject a bit position (first-appearance order)."""
    order: dict[Hashable, int] = {}
    for m in masks:
        if m.subject not in order:
            order[m.subject] = len(order)
    if len(order) > MAX_SUBJECTS:
        raise UsageError(f"at most {MAX_SUBJECTS} distinct subjects per mask")
    return order


def membership_words(masks: Sequence[SubjectMask], grid: TokenGrid, frames: int) -> np.ndarray:
    """Per-token uint64 bitset of the subjects covering it, frame-major."""
    n = grid.tokens
    bits = subject_bits(masks)
    words = np.zeros(frames * n, dtype=np.uint64)
    for m in masks:
        if m.shape != (grid.height, grid.width):
            raise UsageError(f"mask for {m.subject!r} has grid {m.shape}, expected {(grid.height, grid.width)}")
        if not 0 <= m.frame < frames:
            raise UsageError(f"mask frame {m.frame} outside [0, {frames})")
        block = words[m.frame * n:(m.frame + 1) * n]
        block[m.bits] |= np.uint64(1 << bits[m.subject])
    return words


def _check_unique(masks: Sequence[SubjectMask]):
    seen = set()
    for m in masks:
        key = (m.frame, m.subject)
        if key in seen:
            raise UsageError(f"duplicate mask for subject {m.subject!r} in frame {m.frame}")
        seen.add(key)


def build_intra_mask(masks: Sequence[SubjectMask], grid: TokenGrid, dropout: DropoutParams,
                     *, frame: int | None = None, timestep: int = 0, layer: int = 0) -> AttentionMask:
    """N x N mask for one frame.

    Entry (i, j) is 1 when tokens i and j share a subject region, when the
    keyed uniform draw for (i, j) exceeds ``beta_d`` (dropout enabled only),
    or when i == j.
    """
    frames = {m.frame for m in masks}
    if frame is not None:
        frames.add(frame)
    if len(frames) > 1:
        raise UsageError(f"intra mask needs masks from one frame, got frames {sorted(frames)}")
    frame = frames.pop() if frames else 0
    _check_unique(masks)
    local = [SubjectMask(0, m.subject, m.bits, m.shape) for m in masks]
    words = membership_words(local, grid, 1)
    draws = None
    if dropout.enabled:
        draws = uniform_matrix((grid.tokens, grid.tokens), dropout.seed, timestep, layer,
                               SCOPE_INTRA, frame)
    bits = kernels.region_mask(words, draws, float(dropout.beta_d))
    return AttentionMask("intra", bits.astype(bool), frame=frame)


def build_cross_mask(masks: Sequence[SubjectMask], grid: TokenGrid, dropout: DropoutParams,
                     *, timestep: int = 0, layer: int = 0) -> AttentionMask:
    """BN x BN mask over all frames; subjects match by id across frames."""
    _check_unique(masks)
    words = membership_words(masks, grid, grid.frame_count)
    n = words.size
    draws = None
    if dropout.enabled:
        draws = uniform_matrix((n, n), dropout.seed, timestep, layer, SCOPE_CROSS)
    bits = kernels.region_mask(words, draws, float(dropout.beta_d))
    return AttentionMask("cross", bits.astype(bool))


def block_diagonal(blocks: Sequence[AttentionMask]) -> AttentionMask:
    """Stack per-frame intra masks into a BN x BN mask with no cross-frame pairs."""
    n = blocks[0].size
    out = np.zeros((n * len(blocks), n * len(blocks)), dtype=bool)
    for l, block in enumerate(blocks):
        if block.size != n:
            raise UsageError("all blocks must share a size")
        out[l * n:(l + 1) * n, l * n:(l + 1) * n] = block.bits
    return AttentionMask("cross", out)


def expected_offregion_density(beta_d: float) -> float:
    """Expected fraction of off-region pairs that dropout lets through."""
    if not 0.0 <= beta_d <= 1.0:
        raise UsageError(f"beta_d must lie in [0, 1], got {beta_d}")
    return 1.0 - beta_d
