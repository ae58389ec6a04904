import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storybooth.errors import UsageError
from storybooth.masks import (
    AttentionMask,
    DropoutParams,
    SubjectMask,
    TokenGrid,
    block_diagonal,
    build_cross_mask,
    build_intra_mask,
    expected_offregion_density,
    membership_words,
    rasterize_box,
    resample_mask,
)
from storybooth.plan import BoundingBox
from storybooth.rng import SCOPE_CROSS, uniform_matrix

from reference import brute_cross_mask, brute_rasterize

OFF = DropoutParams(enabled=False)


def test_tiny_box_snaps_to_one_token():
    m = rasterize_box(BoundingBox(0.49, 0.49, 0.51, 0.51), TokenGrid(4, 4), 0, "a")
    assert m.bits.sum() == 1


def test_downsample_keeps_corner_token():
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = True
    out = resample_mask(SubjectMask(0, "a", bits, (4, 4)), TokenGrid(4, 4), TokenGrid(2, 2))
    assert out.grid2d().tolist() == [[True, False], [False, False]]


def test_upsample_is_nearest_neighbour():
    bits = np.array([[1, 0], [0, 1]], dtype=bool)
    out = resample_mask(SubjectMask(0, "a", bits, (2, 2)), TokenGrid(2, 2), TokenGrid(4, 4))
    assert np.array_equal(out.grid2d(), np.kron(bits, np.ones((2, 2), dtype=bool)))


boxes = st.tuples(st.floats(0, 0.9), st.floats(0, 0.9), st.floats(0.05, 1), st.floats(0.05, 1)).map(
    lambda t: (t[0], t[1], min(1.0, t[0] + t[2]), min(1.0, t[1] + t[3]))
).filter(lambda b: b[2] > b[0] and b[3] > b[1])


@settings(max_examples=200, deadline=None)
@given(boxes, st.integers(1, 12), st.integers(1, 12))
def test_rasterize_matches_cell_centre_rule(box, h, w):
    m = rasterize_box(BoundingBox(*box), TokenGrid(h, w), 0, "s")
    ref = brute_rasterize(box, h, w)
    assert m.bits.any()
    if ref.any():
        assert np.array_equal(m.grid2d(), ref)
    else:
        assert m.bits.sum() <= max(h, w)


@settings(max_examples=100, deadline=None)
@given(boxes, st.integers(1, 12), st.integers(1, 12), st.integers(1, 12), st.integers(1, 12))
def test_resample_never_loses_a_subject(box, h, w, h2, w2):
    m = rasterize_box(BoundingBox(*box), TokenGrid(h, w), 0, "s")
    out = resample_mask(m, TokenGrid(h, w), TokenGrid(h2, w2))
    assert out.bits.any() and out.shape == (h2, w2)


def _random_masks(rng, frames, h, w, subjects, drop_prob=0.3):
    masks = []
    for f in range(frames):
        for s in range(subjects):
            if rng.random() < drop_prob and s:
                continue
            x0, y0 = rng.uniform(0, 0.7, 2)
            box = BoundingBox(x0, y0, min(1.0, x0 + rng.uniform(0.1, 0.6)), min(1.0, y0 + rng.uniform(0.1, 0.6)))
            masks.append(rasterize_box(box, TokenGrid(h, w, frames), f, f"s{s}"))
    return masks


def test_cross_mask_matches_brute_force(rng):
    for case in range(20):
        h, w = rng.integers(1, 5, 2)
        grid = TokenGrid(int(h), int(w), 2)
        masks = _random_masks(rng, 2, grid.height, grid.width, int(rng.integers(1, 4)))
        dropout = DropoutParams(0.7, seed=case)
        got = build_cross_mask(masks, grid, dropout, timestep=10, layer=1)
        draws = uniform_matrix((2 * grid.tokens,) * 2, case, 10, 1, SCOPE_CROSS)
        assert np.array_equal(got.bits, brute_cross_mask(masks, grid.tokens, 2, draws, 0.7))


def test_cross_diagonal_blocks_equal_intra(rng):
    for _ in range(10):
        frames = int(rng.integers(1, 4))
        grid = TokenGrid(3, 4, frames)
        masks = _random_masks(rng, frames, 3, 4, 3)
        cross = build_cross_mask(masks, grid, OFF)
        n = grid.tokens
        for f in range(frames):
            intra = build_intra_mask([m for m in masks if m.frame == f], grid, OFF, frame=f)
            assert np.array_equal(cross.bits[f * n:(f + 1) * n, f * n:(f + 1) * n], intra.bits)


def test_single_frame_cross_equals_intra(rng):
    grid = TokenGrid(4, 4, 1)
    masks = _random_masks(rng, 1, 4, 4, 3)
    assert np.array_equal(build_cross_mask(masks, grid, OFF).bits,
                          build_intra_mask(masks, grid, OFF, frame=0).bits)


def test_mask_symmetric_without_dropout(rng):
    grid = TokenGrid(4, 4, 3)
    cross = build_cross_mask(_random_masks(rng, 3, 4, 4, 3), grid, OFF)
    assert np.array_equal(cross.bits, cross.bits.T)
    assert cross.bits.diagonal().all()


def test_frame_permutation_equivariance(rng):
    grid = TokenGrid(3, 3, 3)
    masks = _random_masks(rng, 3, 3, 3, 2, drop_prob=0.0)
    perm = [2, 0, 1]
    moved = [SubjectMask(perm[m.frame], m.subject, m.bits, m.shape) for m in masks]
    a = build_cross_mask(masks, grid, OFF).bits
    b = build_cross_mask(moved, grid, OFF).bits
    n = grid.tokens
    idx = np.concatenate([np.arange(n) + perm[f] * n for f in range(3)])
    assert np.array_equal(a, b[np.ix_(idx, idx)])


def test_dropout_density_and_determinism():
    grid = TokenGrid(16, 16, 1)
    masks = [rasterize_box(BoundingBox(0, 0, 0.25, 0.25), grid, 0, "a")]
    d = DropoutParams(0.9, seed=4)
    a = build_intra_mask(masks, grid, d, timestep=500, layer=2)
    b = build_intra_mask(masks, grid, d, timestep=500, layer=2)
    c = build_intra_mask(masks, grid, d, timestep=480, layer=2)
    assert a == b and a != c
    region = np.outer(masks[0].bits, masks[0].bits) | np.eye(grid.tokens, dtype=bool)
    off = a.bits[~region]
    p = expected_offregion_density(0.9)
    sigma = np.sqrt(p * (1 - p) / off.size)
    assert abs(off.mean() - p) < 3 * sigma


def test_beta_one_disables_all_off_region_pairs():
    grid = TokenGrid(6, 6, 2)
    masks = [rasterize_box(BoundingBox(0, 0, 0.5, 1), grid, f, "a") for f in range(2)]
    on = build_cross_mask(masks, grid, DropoutParams(1.0, seed=1))
    assert on == build_cross_mask(masks, grid, OFF)
    assert build_cross_mask(masks, grid, DropoutParams(0.0, seed=1)).bits.all()


def test_membership_words_bitsets():
    grid = TokenGrid(1, 2, 2)
    masks = [SubjectMask(0, "a", [1, 1], (1, 2)), SubjectMask(0, "b", [0, 1], (1, 2)),
             SubjectMask(1, "b", [1, 0], (1, 2))]
    assert membership_words(masks, grid, 2).tolist() == [1, 3, 2, 0]


def test_validation_errors():
    grid = TokenGrid(2, 2, 1)
    m = SubjectMask(0, "a", [1, 0, 0, 0], (2, 2))
    with pytest.raises(UsageError):
        build_cross_mask([m, m], grid, OFF)
    with pytest.raises(UsageError):
        SubjectMask(0, "a", [0, 0, 0, 0], (2, 2))
    with pytest.raises(UsageError):
        AttentionMask("cross", np.zeros((2, 2)))
    with pytest.raises(UsageError):
        DropoutParams(1.5)
    with pytest.raises(UsageError):
        build_intra_mask([m, SubjectMask(1, "b", [1, 0, 0, 0], (2, 2))], grid, OFF)


def test_block_diagonal_has_no_cross_frame_pairs():
    blocks = [AttentionMask.full(3, "intra"), AttentionMask.identity(3, "intra")]
    bits = block_diagonal(blocks).bits
    assert not bits[:3, 3:].any() and not bits[3:, :3].any()
    assert bits[:3, :3].all()
