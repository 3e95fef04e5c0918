import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dclab.errors import InputError, StreamError
from dclab.schedule import (
    KINDS, NEIGHBOR_OFFSETS, audit_partition, available_context, build_schedule,
    cross_channel_profile, explicit_schedule, neighbor_profile, schedule_from_text,
    schedule_to_text,
)

from oracles import quadtree_latin_square


def enumerate_quadtree_counts(size=8):
    """Neighbour and cross-group counts straight from the Latin square."""
    square = quadtree_latin_square()
    step = np.zeros((4, size, size), dtype=int)
    for g in range(4):
        for r in range(size):
            for c in range(size):
                step[g, r, c] = square[g, 2 * (r % 2) + (c % 2)]
    spatial = {s: set() for s in range(4)}
    cross = {s: set() for s in range(4)}
    for g in range(4):
        for r in range(1, size - 1):
            for c in range(1, size - 1):
                s = step[g, r, c]
                n = sum(step[g, r + dr, c + dc] < s for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                        if (dr, dc) != (0, 0))
                spatial[s].add(int(n))
                cross[s].add(int(sum(step[o, r, c] < s for o in range(4) if o != g)))
    return step, spatial, cross


def test_quadtree_matches_latin_square_enumeration():
    step, spatial, cross = enumerate_quadtree_counts()
    sched = build_schedule("quadtree", 8, 8)
    assert np.array_equal(sched.order, step)
    prof = neighbor_profile(sched)
    assert prof.per_step == (0, 4, 4, 8)
    assert [spatial[s] for s in range(4)] == [{0}, {4}, {4}, {8}]
    assert [cross[s] for s in range(4)] == [{0}, {1}, {2}, {3}]
    assert cross_channel_profile(sched) == [(0,), (1,), (2,), (3,)]


def test_quadtree_step0_positions_distinct():
    order = build_schedule("quadtree", 2, 2).order
    firsts = {tuple(np.argwhere(order[g] == 0)[0]) for g in range(4)}
    assert len(firsts) == 4
    for g in range(4):
        (r0, c0), (r1, c1) = np.argwhere(order[g] == 0)[0], np.argwhere(order[g] == 1)[0]
        assert (r0 + r1, c0 + c1) == (1, 1)  # diagonal complement


def test_average_is_twice_checkerboard():
    q = neighbor_profile(build_schedule("quadtree", 64, 64)).average
    c = neighbor_profile(build_schedule("checkerboard", 64, 64)).average
    assert (q, c) == (4.0, 2.0)


def test_checkerboard_and_dual_profiles():
    assert neighbor_profile(build_schedule("checkerboard", 8, 8)).per_step == (0, 4)
    dual = build_schedule("dual_spatial", 4, 4)
    assert neighbor_profile(dual).per_step == (0, 4)
    assert all(min(c) >= 1 for c in cross_channel_profile(dual)[1:])
    assert build_schedule("checkerboard", 1, 1).step_count == 1


def test_raster_context():
    r = build_schedule("raster", 5, 6)
    assert r.step_count == 30
    ctx = available_context(r, r.order[0, 2, 3], 0, (2, 3))
    assert sorted(ctx.spatial) == [(1, 2), (1, 3), (1, 4), (2, 2)]
    assert available_context(r, 0, 0, (0, 0)).spatial == ()


def test_quadtree_step_contexts():
    q = build_schedule("quadtree", 8, 8)
    diag = {(-1, -1), (-1, 1), (1, -1), (1, 1)}
    axis = {(-1, 0), (1, 0), (0, -1), (0, 1)}
    for g in range(4):
        for s, want in ((1, diag), (2, axis)):
            r, c = [p for p in np.argwhere(q.order[g] == s) if 0 < p[0] < 7 and 0 < p[1] < 7][0]
            ctx = available_context(q, s, g, (int(r), int(c)))
            assert {(a - r, b - c) for a, b in ctx.spatial} == want


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.integers(1, 64), st.integers(1, 64))
def test_every_schedule_passes_audit(kind, h, w):
    if kind == "raster" and h * w > 600:
        h, w = min(h, 20), min(w, 20)
    try:
        sched = build_schedule(kind, h, w)
    except InputError:
        pytest.skip("grid too small for this kind")
    assert audit_partition(sched) == []


@pytest.mark.parametrize("kind", ["quadtree", "checkerboard", "dual_spatial", "raster"])
@pytest.mark.parametrize("size", [(6, 6), (7, 5)])
def test_step_parallelism(kind, size):
    """No position's context includes a position coded in the same step."""
    sched = build_schedule(kind, *size)
    order = sched.order
    h, w = size
    for g in range(sched.group_count):
        for r in range(h):
            for c in range(w):
                s = order[g, r, c]
                ctx = available_context(sched, int(s), g, (r, c))
                for a, b in ctx.spatial:
                    assert order[g, a, b] < s
                for o in ctx.groups:
                    assert order[o, r, c] < s


def test_odd_dimensions_fold_into_last_step():
    q = build_schedule("quadtree", 5, 7)
    assert audit_partition(q) == []
    assert q.step_count == 4
    assert np.all(q.order[:, 4, :] == 3) and np.all(q.order[:, :, 6] == 3)


def test_audit_reports_violations():
    good = build_schedule("checkerboard", 2, 2)
    steps = [[np.array([[0, 0], [0, 1]])], [np.array([[0, 1], [1, 1]])]]
    problems = audit_partition(explicit_schedule("checkerboard", 1, 2, 2, steps))
    assert any("coded 2 times" in p for p in problems)
    assert any("never coded" in p for p in problems)
    oob = explicit_schedule("checkerboard", 1, 1, 1, [[np.array([[0, 0], [3, 0]])]])
    assert any("out of bounds" in p for p in audit_partition(oob))
    assert audit_partition(good) == []


@pytest.mark.parametrize("kind", KINDS)
def test_text_round_trip(kind):
    sched = build_schedule(kind, 6, 4)
    back = schedule_from_text(schedule_to_text(sched))
    assert np.array_equal(back.order, sched.order) and back.kind == sched.kind


def test_text_garbage():
    with pytest.raises(StreamError):
        schedule_from_text("quadtree nope")


def test_neighbor_offsets_cover_ring():
    assert len(NEIGHBOR_OFFSETS) == 8 and (0, 0) not in NEIGHBOR_OFFSETS
