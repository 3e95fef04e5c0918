import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dclab.alignment import (
    AlignConfig, ModulationMask, OffsetField, align, alignment_mse, block_match,
    compose_offsets, cross_order, diversity_offsets, dump_offsets, fuse_adjacent,
    load_offsets, reorder_groups_cross, warp_groups,
)
from dclab.errors import InputError
from dclab.lattice import GroupPartition, Lattice, MotionField
from dclab.sources import moving_sequence, two_motion_spec


def rand_lattice(c, h, w, seed=0):
    return Lattice(np.random.default_rng(seed).normal(size=(c, h, w)))


def test_compose_offsets():
    base = MotionField.constant(3, 3, 1.0, 0.0)
    res = np.zeros((2, 2, 2, 3, 3))
    res[1, 0, 1, 1, 1] = 2.0
    out = compose_offsets(base, OffsetField(res)).data
    assert tuple(out[1, 0, :, 1, 1]) == (1.0, 2.0)
    assert np.array_equal(compose_offsets(base, OffsetField.zeros(2, 2, 3, 3)).data[0, 1], base.data)
    assert compose_offsets(MotionField.zeros(3, 3), OffsetField(res)) == OffsetField(res)


def test_warp_groups_identity_and_mask_linearity():
    feat = rand_lattice(4, 5, 6)
    part = GroupPartition(2, 4)
    offs = OffsetField.zeros(2, 3, 5, 6)
    out = warp_groups(feat, offs, ModulationMask.ones(2, 3, 5, 6), part)
    assert len(out) == 6
    for i in range(2):
        for j in range(3):
            assert np.array_equal(out[i * 3 + j].data, feat.data[2 * i:2 * i + 2])
    half = warp_groups(feat, offs, ModulationMask.ones(2, 3, 5, 6).scaled(0.5), part)
    assert all(np.array_equal(h.data, 0.5 * o.data) for h, o in zip(half, out))


def test_warp_groups_shape_errors():
    feat = rand_lattice(4, 5, 6)
    with pytest.raises(InputError):
        warp_groups(feat, OffsetField.zeros(2, 1, 5, 5), ModulationMask.ones(2, 1, 5, 6),
                    GroupPartition(2, 4))
    with pytest.raises(InputError):
        warp_groups(feat, OffsetField.zeros(2, 1, 5, 6), ModulationMask.ones(2, 2, 5, 6),
                    GroupPartition(2, 4))
    with pytest.raises(InputError):
        ModulationMask(np.full((1, 1, 2, 2), 1.5))


def test_reorder_fig_order():
    labels = [f"g{i}^{j}" for i in range(4) for j in range(2)]
    assert reorder_groups_cross(labels, 4, 2) == [
        "g0^0", "g1^0", "g2^0", "g3^0", "g0^1", "g1^1", "g2^1", "g3^1"]
    assert reorder_groups_cross(list(range(5)), 5, 1) == list(range(5))
    with pytest.raises(InputError):
        reorder_groups_cross(labels, 3, 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5))
def test_reorder_transpose_involution(g, n):
    items = list(range(g * n))
    once = reorder_groups_cross(items, g, n)
    assert sorted(once) == items
    assert reorder_groups_cross(once, n, g) == items
    assert cross_order(g, n) == once


def test_fuse_adjacent():
    a = rand_lattice(2, 3, 3, 1)
    assert fuse_adjacent([a, a], 2)[0] == a
    assert fuse_adjacent([a], 1)[0] == a
    with pytest.raises(InputError):
        fuse_adjacent([a, a, a], 2)


def tracer(groups, reorder):
    """support[k] = set of source groups that reach fused output k."""
    c, h, w, n = groups, 2, 2, 2
    cfg = AlignConfig(groups, n, c, reorder)
    support = [set() for _ in range(groups)]
    for s in range(groups):
        data = np.zeros((c, h, w))
        data[s] = 1.0
        out = align(Lattice(data), MotionField.zeros(h, w), OffsetField.zeros(groups, n, h, w),
                    None, cfg).data
        for k in range(groups):
            if np.any(out[k] != 0):
                support[k].add(s)
    return support


def test_one_hot_tracer():
    on, off = tracer(4, True), tracer(4, False)
    assert on == [{(2 * k) % 4, (2 * k + 1) % 4} for k in range(4)]
    assert off == [{k} for k in range(4)]


def test_identity_pipeline():
    feat = rand_lattice(48, 6, 6, 2)
    cfg = AlignConfig(16, 2, 48, reorder=False)
    out = align(feat, MotionField.zeros(6, 6), OffsetField.zeros(16, 2, 6, 6), None, cfg)
    assert np.allclose(out.data, feat.data, rtol=0, atol=1e-15)


def test_reorder_on_averages_pairs():
    feat = rand_lattice(48, 6, 6, 3)
    cfg = AlignConfig(16, 2, 48, reorder=True)
    out = align(feat, MotionField.zeros(6, 6), OffsetField.zeros(16, 2, 6, 6), None, cfg).data
    x = feat.data.reshape(16, 3, 6, 6)
    for k in range(16):
        a, b = (2 * k) % 16, (2 * k + 1) % 16
        assert np.allclose(out[3 * k:3 * k + 3], 0.5 * (x[a] + x[b]), rtol=0, atol=1e-15)


def test_zero_masks_give_zero_output():
    feat = rand_lattice(8, 5, 5, 4)
    cfg = AlignConfig(4, 2, 8)
    rng = np.random.default_rng(0)
    res = OffsetField(rng.normal(size=(4, 2, 2, 5, 5)))
    out = align(feat, MotionField.constant(5, 5, 0.3, -0.2), res,
                ModulationMask(np.zeros((4, 2, 5, 5))), cfg)
    assert np.all(out.data == 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_align_linear_in_masks_and_weights(seed, reorder):
    rng = np.random.default_rng(seed)
    feat = Lattice(rng.normal(size=(8, 5, 5)))
    res = OffsetField(rng.normal(size=(4, 2, 2, 5, 5)))
    base = MotionField(rng.normal(size=(2, 5, 5)))
    m1, m2 = rng.random((4, 2, 5, 5)) * 0.5, rng.random((4, 2, 5, 5)) * 0.5
    w1, w2 = rng.random((4, 2)), rng.random((4, 2))

    def run(m, w):
        cfg = AlignConfig(4, 2, 8, reorder, tuple(map(tuple, w)))
        return align(feat, base, res, ModulationMask(m), cfg).data

    assert np.allclose(run(m1 + m2, w1), run(m1, w1) + run(m2, w1), atol=1e-12)
    assert np.allclose(run(m1, w1 + w2), run(m1, w1) + run(m1, w2), atol=1e-12)


@pytest.mark.parametrize("g,n,reorder", [(1, 1, False), (4, 2, True), (16, 2, True), (8, 3, False)])
def test_channel_count_conserved(g, n, reorder):
    feat = rand_lattice(48, 4, 4)
    out = align(feat, MotionField.zeros(4, 4), OffsetField.zeros(g, n, 4, 4), None,
                AlignConfig(g, n, 48, reorder))
    assert out.channels == 48


def test_reorder_is_a_permutation_of_lattices():
    items = [rand_lattice(1, 2, 2, s) for s in range(8)]
    out = reorder_groups_cross(items, 4, 2)
    assert sorted(id(x) for x in out) == sorted(id(x) for x in items)


def test_block_match_recovers_translation():
    rng = np.random.default_rng(5)
    ref = rng.normal(size=(3, 32, 32))
    cur = np.roll(ref, shift=(2, -3), axis=(1, 2))  # content moves by (dx, dy) = (-3, 2)
    mv = block_match(cur, ref)
    assert np.all(mv[0, 1:-1, 1:-1] == 3) and np.all(mv[1, 1:-1, 1:-1] == -2)


def test_block_match_tie_prefers_zero():
    flat = np.zeros((16, 16))
    assert np.all(block_match(flat, flat) == 0)


def test_ground_truth_offsets_beat_global_flow():
    spec = two_motion_spec(4)
    scene = moving_sequence(spec)
    prev, cur = scene.frames
    bg, fg = np.array(spec.background_motion), np.array(spec.regions[0].motion)
    h = w = 64
    fg_map = scene.layers[1] == 1
    region = fg_map & scene.valid[1]
    base = MotionField.constant(h, w, -bg[0], -bg[1])
    cfg = AlignConfig(16, 2, 48, reorder=False)
    res = np.zeros((16, 2, 2, h, w))
    res[:, 1, 0], res[:, 1, 1] = -(fg[0] - bg[0]), -(fg[1] - bg[1])
    m = np.zeros((16, 2, h, w))
    m[:, 0], m[:, 1] = ~fg_map, fg_map
    masks = ModulationMask(m)
    div = alignment_mse(align(prev, base, OffsetField(res), masks, cfg), cur, masks, cfg, region)
    single = AlignConfig(16, 1, 48, reorder=False)
    glob = alignment_mse(align(prev, base, OffsetField.zeros(16, 1, h, w), None, single), cur,
                         None, single, region)
    assert glob >= 10 * div and glob > 0.1


def test_diversity_offsets_shapes():
    scene = moving_sequence(two_motion_spec(1))
    base, res, masks, cfg = diversity_offsets(scene.frames[1], scene.frames[0], AlignConfig())
    assert res.data.shape == (16, 2, 2, 64, 64) and masks.data.shape == (16, 2, 64, 64)
    assert np.all(masks.data.sum(axis=1) == 1.0)
    assert cfg.weights().shape == (16, 2)


def test_offset_dump_round_trip():
    rng = np.random.default_rng(2)
    offs = OffsetField(rng.normal(size=(3, 2, 2, 4, 5)))
    masks = ModulationMask(rng.random((3, 2, 4, 5)))
    o2, m2, end = load_offsets(dump_offsets(offs, masks))
    assert o2 == offs and np.array_equal(m2.data, masks.data)
