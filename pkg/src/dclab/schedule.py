"""Entropy-coding orders over a (group, row, col) latent grid.

A schedule is a list of steps; each step names, per channel group, the
positions coded in that step. Everything coded in an earlier step is
visible as context; positions within one step never see each other, so a
whole step can be decoded in parallel.

Quadtree layout: inside every 2x2 patch the four channel groups code the
four intra-patch positions in a Latin-square order, so each step touches a
different position per group and the spatial contexts available at steps
0..3 are 0, 4 (diagonal), 4 (axis) and 8 neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InputError, StreamError

__all__ = [
    "KINDS",
    "NEIGHBOR_OFFSETS",
    "QUADTREE_ORDER",
    "CodingStep",
    "CodingSchedule",
    "Context",
    "NeighborProfile",
    "build_schedule",
    "build_quadtree_schedule",
    "build_checkerboard_schedule",
    "build_dual_spatial_schedule",
    "build_raster_schedule",
    "build_context_free_schedule",
    "audit_partition",
    "available_context",
    "neighbor_profile",
    "cross_channel_profile",
    "schedule_to_text",
    "schedule_from_text",
]

KINDS = ("context_free", "checkerboard", "dual_spatial", "quadtree", "raster")

# (dr, dc); axis neighbours first, then diagonals
NEIGHBOR_OFFSETS = (
    (0, -1), (-1, 0), (0, 1), (1, 0),
    (-1, -1), (-1, 1), (1, -1), (1, 1),
)
AXIS_OFFSETS = NEIGHBOR_OFFSETS[:4]
DIAGONAL_OFFSETS = NEIGHBOR_OFFSETS[4:]

TL, TR, BL, BR = (0, 0), (0, 1), (1, 0), (1, 1)
# per group: intra-patch position coded at steps 0..3
QUADTREE_ORDER = (
    (TL, BR, TR, BL),
    (BR, TL, BL, TR),
    (TR, BL, TL, BR),
    (BL, TR, BR, TL),
)


@dataclass(frozen=True, eq=False)
class CodingStep:
    step_index: int
    positions: tuple  # per group: (n, 2) int array of (row, col)

    def group_positions(self, g: int) -> np.ndarray:
        return self.positions[g]

    @property
    def size(self) -> int:
        return sum(len(p) for p in self.positions)


@dataclass(frozen=True, eq=False)
class CodingSchedule:
    kind: str
    group_count: int
    height: int
    width: int
    steps: tuple = field(repr=False)

    @property
    def step_count(self) -> int:
        return len(self.steps)

    @cached_property
    def order(self) -> np.ndarray:
        """(G, H, W) step index of each (group, position); -1 if never coded."""
        order = np.full((self.group_count, self.height, self.width), -1, dtype=np.int64)
        for step in self.steps:
            for g, pos in enumerate(step.positions):
                if len(pos):
                    order[g, pos[:, 0], pos[:, 1]] = step.step_index
        order.flags.writeable = False
        return order

    @property
    def shares_predictors(self) -> bool:
        """Raster steps all share one predictor (one step per position)."""
        return self.kind == "raster"

    def step_class(self, step: int) -> int:
        return 0 if self.shares_predictors else step

    @property
    def step_classes(self) -> list[int]:
        return [0] if self.shares_predictors else list(range(self.step_count))

    def steps_in_class(self, cls: int) -> list[int]:
        return list(range(self.step_count)) if self.shares_predictors else [cls]

    def __eq__(self, other):
        if not isinstance(other, CodingSchedule):
            return NotImplemented
        return (
            (self.kind, self.group_count, self.height, self.width)
            == (other.kind, other.group_count, other.height, other.width)
            and self.step_count == other.step_count
            and bool(np.array_equal(self.order, other.order))
        )

    __hash__ = None


def _from_order(kind: str, order: np.ndarray) -> CodingSchedule:
    """Build steps from a (G, H, W) step map, dropping steps nobody uses."""
    g_count, h, w = order.shape
    used, dense = np.unique(order, return_inverse=True)
    dense = dense.reshape(g_count, h * w)
    split = []
    for g in range(g_count):
        idx = np.argsort(dense[g], kind="stable")
        bounds = np.searchsorted(dense[g][idx], np.arange(len(used) + 1))
        cells = np.stack([idx // w, idx % w], axis=1).astype(np.int64)
        split.append([cells[bounds[s]:bounds[s + 1]] for s in range(len(used))])
    steps = tuple(CodingStep(s, tuple(split[g][s] for g in range(g_count)))
                  for s in range(len(used)))
    return CodingSchedule(kind, g_count, h, w, steps)


def _check_dims(height: int, width: int) -> None:
    if height < 1 or width < 1:
        raise InputError("schedule needs a non-empty grid")


def _fold_dangling(order: np.ndarray, last_step: int) -> np.ndarray:
    """Odd sizes: the unpaired last row/column goes to each group's final step."""
    _, h, w = order.shape
    if h % 2:
        order[:, h - 1, :] = last_step
    if w % 2:
        order[:, :, w - 1] = last_step
    return order


def build_quadtree_schedule(height: int, width: int) -> CodingSchedule:
    _check_dims(height, width)
    order = np.empty((4, height, width), dtype=np.int64)
    rows = np.arange(height)[:, None] % 2
    cols = np.arange(width)[None, :] % 2
    for g, seq in enumerate(QUADTREE_ORDER):
        for step, (pr, pc) in enumerate(seq):
            order[g][(rows == pr) & (cols == pc)] = step
    return _from_order("quadtree", _fold_dangling(order, 3))


def _parity(height: int, width: int) -> np.ndarray:
    return (np.arange(height)[:, None] + np.arange(width)[None, :]) % 2


def build_checkerboard_schedule(height: int, width: int) -> CodingSchedule:
    _check_dims(height, width)
    order = _parity(height, width)[None].astype(np.int64).copy()
    return _from_order("checkerboard", _fold_dangling(order, 1))


def build_dual_spatial_schedule(height: int, width: int) -> CodingSchedule:
    """Two channel groups with complementary checkerboard anchors."""
    _check_dims(height, width)
    par = _parity(height, width).astype(np.int64)
    order = np.stack([par, 1 - par])
    return _from_order("dual_spatial", _fold_dangling(order, 1))


def build_raster_schedule(height: int, width: int) -> CodingSchedule:
    _check_dims(height, width)
    order = np.arange(height * width, dtype=np.int64).reshape(1, height, width)
    return _from_order("raster", order)


def build_context_free_schedule(height: int, width: int) -> CodingSchedule:
    _check_dims(height, width)
    return _from_order("context_free", np.zeros((1, height, width), dtype=np.int64))


_BUILDERS = {
    "context_free": build_context_free_schedule,
    "checkerboard": build_checkerboard_schedule,
    "dual_spatial": build_dual_spatial_schedule,
    "quadtree": build_quadtree_schedule,
    "raster": build_raster_schedule,
}


def build_schedule(kind: str, height: int, width: int) -> CodingSchedule:
    try:
        return _BUILDERS[kind](height, width)
    except KeyError:
        raise InputError(f"unknown schedule kind {kind!r}; choose from {', '.join(KINDS)}") from None


def audit_partition(schedule: CodingSchedule) -> list[str]:
    """Exactly-once coverage check over the explicit step lists.

    Returns human-readable violations; an empty list means the schedule is
    a valid partition of every (group, position).
    """
    problems = []
    g_count, h, w = schedule.group_count, schedule.height, schedule.width
    seen = np.zeros((g_count, h, w), dtype=np.int64)
    for s, step in enumerate(schedule.steps):
        if step.step_index != s:
            problems.append(f"step {s} carries index {step.step_index}")
        if len(step.positions) != g_count:
            problems.append(f"step {s} lists {len(step.positions)} groups, expected {g_count}")
            continue
        for g, pos in enumerate(step.positions):
            pos = np.asarray(pos).reshape(-1, 2)
            bad = (pos[:, 0] < 0) | (pos[:, 0] >= h) | (pos[:, 1] < 0) | (pos[:, 1] >= w)
            for r, c in pos[bad]:
                problems.append(f"step {s} group {g}: ({r}, {c}) out of bounds")
            ok = pos[~bad]
            np.add.at(seen[g], (ok[:, 0], ok[:, 1]), 1)
    for g, r, c in np.argwhere(seen == 0):
        problems.append(f"group {g} position ({r}, {c}) never coded")
    for g, r, c in np.argwhere(seen > 1):
        problems.append(f"group {g} position ({r}, {c}) coded {seen[g, r, c]} times")
    return problems


@dataclass(frozen=True)
class Context:
    spatial: tuple  # (row, col) neighbours of the same group already coded
    groups: tuple  # other groups already coded at this position


def available_context(schedule: CodingSchedule, step_index: int, group: int,
                      position: tuple[int, int]) -> Context:
    r, c = position
    order = schedule.order
    if not (0 <= r < schedule.height and 0 <= c < schedule.width):
        raise InputError(f"position {position} outside the grid")
    if not 0 <= group < schedule.group_count:
        raise InputError(f"group {group} out of range")
    spatial = []
    for dr, dc in NEIGHBOR_OFFSETS:
        rr, cc = r + dr, c + dc
        if 0 <= rr < schedule.height and 0 <= cc < schedule.width and order[group, rr, cc] < step_index:
            spatial.append((rr, cc))
    groups = tuple(g for g in range(schedule.group_count)
                   if g != group and order[g, r, c] < step_index)
    return Context(tuple(sorted(spatial)), groups)


def _neighbor_counts(schedule: CodingSchedule) -> np.ndarray:
    """(G, H, W) count of same-group 8-neighbours coded strictly earlier."""
    order = schedule.order
    g_count, h, w = order.shape
    big = np.iinfo(np.int64).max
    padded = np.full((g_count, h + 2, w + 2), big, dtype=np.int64)
    padded[:, 1:-1, 1:-1] = order
    counts = np.zeros_like(order)
    for dr, dc in NEIGHBOR_OFFSETS:
        counts += padded[:, 1 + dr:1 + dr + h, 1 + dc:1 + dc + w] < order
    return counts


@dataclass(frozen=True)
class NeighborProfile:
    per_step: tuple  # interior neighbour count per step (None: no interior positions)
    uniform: bool  # every interior position of a step has the same count
    average: float  # mean over all interior (group, position) pairs


def neighbor_profile(schedule: CodingSchedule) -> NeighborProfile:
    """Available 8-neighbourhood size for interior positions, per step."""
    counts = _neighbor_counts(schedule)
    order = schedule.order
    interior = np.zeros(order.shape[1:], dtype=bool)
    interior[1:-1, 1:-1] = True
    per_step, uniform = [], True
    sel_all = []
    for s in range(schedule.step_count):
        sel = counts[(order == s) & interior[None]]
        sel_all.append(sel)
        if sel.size == 0:
            per_step.append(None)
            continue
        if sel.min() != sel.max():
            uniform = False
        per_step.append(float(sel.mean()) if sel.min() != sel.max() else int(sel[0]))
    flat = np.concatenate(sel_all) if sel_all else np.zeros(0)
    average = float(flat.mean()) if flat.size else float("nan")
    return NeighborProfile(tuple(per_step), uniform, average)


def cross_channel_profile(schedule: CodingSchedule) -> list[tuple[int, ...]]:
    """Per step: the distinct counts of other groups already coded at a position."""
    order = schedule.order
    out = []
    for s in range(schedule.step_count):
        coded_before = (order < s).sum(axis=0)
        counts = {int(coded_before[r, c]) for g in range(schedule.group_count)
                  for r, c in schedule.steps[s].positions[g]}
        out.append(tuple(sorted(counts)))
    return out


def schedule_to_text(schedule: CodingSchedule) -> str:
    """Header line, then one line per (step, group): ``step group r,c r,c ...``."""
    lines = [f"{schedule.kind} {schedule.group_count} {schedule.height} {schedule.width}"]
    for step in schedule.steps:
        for g, pos in enumerate(step.positions):
            cells = " ".join(f"{r},{c}" for r, c in pos)
            lines.append(f"{step.step_index} {g} {cells}".rstrip())
    return "\n".join(lines) + "\n"


def schedule_from_text(text: str) -> CodingSchedule:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise StreamError("empty schedule text")
    try:
        kind, g_count, h, w = lines[0].split()
        g_count, h, w = int(g_count), int(h), int(w)
        table: dict[int, list] = {}
        for ln in lines[1:]:
            parts = ln.split()
            s, g = int(parts[0]), int(parts[1])
            cells = [tuple(int(v) for v in p.split(",")) for p in parts[2:]]
            table.setdefault(s, [np.zeros((0, 2), dtype=np.int64)] * g_count)
            table[s] = list(table[s])
            table[s][g] = np.array(cells, dtype=np.int64).reshape(-1, 2)
    except (ValueError, IndexError) as exc:
        raise StreamError(f"malformed schedule text: {exc}") from None
    steps = tuple(CodingStep(s, tuple(table[s])) for s in sorted(table))
    return CodingSchedule(kind, g_count, h, w, steps)


def explicit_schedule(kind: str, group_count: int, height: int, width: int,
                      steps: Sequence[Sequence[np.ndarray]]) -> CodingSchedule:
    """Assemble a schedule from raw per-step, per-group position arrays."""
    built = tuple(
        CodingStep(s, tuple(np.asarray(p, dtype=np.int64).reshape(-1, 2) for p in groups))
        for s, groups in enumerate(steps)
    )
    return CodingSchedule(kind, group_count, height, width, built)
