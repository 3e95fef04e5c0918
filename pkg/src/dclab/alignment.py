"""Group-based offset-diversity alignment.

A feature lattice is split into G channel groups; each group is warped with
N offsets (a shared base motion plus per-offset residuals), masked, put in
group-primary order and fused N at a time back into G groups.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, StreamError
from .lattice import (GroupPartition, Lattice, MotionField, concat_groups, dump_lattice,
                      load_lattice, warp_array)

__all__ = [
    "OffsetField",
    "ModulationMask",
    "AlignConfig",
    "compose_offsets",
    "warp_groups",
    "reorder_groups_cross",
    "cross_order",
    "fuse_adjacent",
    "align",
    "alignment_mse",
    "block_match",
    "block_motion_field",
    "diversity_offsets",
    "dump_offsets",
    "load_offsets",
]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class OffsetField:
    """(G, N, 2, H, W) displacements; slot 0 of axis 2 is dx, slot 1 is dy."""

    __slots__ = ("_data",)

    def __init__(self, data, *, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy)
        if arr.ndim != 5 or arr.shape[2] != 2 or 0 in arr.shape:
            raise InputError(f"offset field must be (G, N, 2, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("offsets must be finite")
        self._data = _frozen(arr)

    @classmethod
    def zeros(cls, groups: int, offsets: int, height: int, width: int) -> "OffsetField":
        return cls(np.zeros((groups, offsets, 2, height, width)), copy=False)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def groups(self) -> int:
        return self._data.shape[0]

    @property
    def offsets(self) -> int:
        return self._data.shape[1]

    @property
    def spatial(self) -> tuple[int, int]:
        return self._data.shape[3], self._data.shape[4]

    def __eq__(self, other):
        if not isinstance(other, OffsetField):
            return NotImplemented
        return self._data.shape == other._data.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None


class ModulationMask:
    """(G, N, H, W) confidences in [0, 1]."""

    __slots__ = ("_data",)

    def __init__(self, data, *, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy)
        if arr.ndim != 4 or 0 in arr.shape:
            raise InputError(f"mask must be (G, N, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise InputError("mask values must lie in [0, 1]")
        self._data = _frozen(arr)

    @classmethod
    def ones(cls, groups: int, offsets: int, height: int, width: int) -> "ModulationMask":
        return cls(np.ones((groups, offsets, height, width)), copy=False)

    @property
    def data(self) -> np.ndarray:
        return self._data

    def scaled(self, factor: float) -> "ModulationMask":
        return ModulationMask(self._data * factor, copy=False)


@dataclass(frozen=True)
class AlignConfig:
    groups: int = 16
    offsets: int = 2
    channels: int = 48
    reorder: bool = True
    fusion_weights: tuple | None = None  # per output group, N weights each; None = 1/N

    def __post_init__(self):
        if self.groups < 1 or self.offsets < 1 or self.channels < 1:
            raise InputError("groups, offsets and channels must be positive")
        if self.channels % self.groups:
            raise InputError(f"{self.channels} channels do not split into {self.groups} groups")
        if self.fusion_weights is not None:
            w = tuple(tuple(float(v) for v in row) for row in self.fusion_weights)
            if len(w) != self.groups or any(len(row) != self.offsets for row in w):
                raise InputError("fusion weights must be G rows of N entries")
            object.__setattr__(self, "fusion_weights", w)

    def weights(self) -> np.ndarray:
        if self.fusion_weights is None:
            return np.full((self.groups, self.offsets), 1.0 / self.offsets)
        return np.array(self.fusion_weights)


def compose_offsets(base: MotionField, residual: OffsetField) -> OffsetField:
    if (base.height, base.width) != residual.spatial:
        raise InputError("base motion and residual offsets differ in size")
    return OffsetField(residual.data + base.data[None, None], copy=False)


def _check(feature: Lattice, offsets: OffsetField, masks: ModulationMask, part: GroupPartition):
    g, n = offsets.groups, offsets.offsets
    if part.group_count != g or part.channels != feature.channels:
        raise InputError("partition does not match the feature/offsets")
    if offsets.spatial != (feature.height, feature.width):
        raise InputError("offsets do not match the feature size")
    if masks.data.shape != (g, n, feature.height, feature.width):
        raise InputError(f"mask shape {masks.data.shape} does not match ({g}, {n}, H, W)")


def warp_groups(feature: Lattice, offsets: OffsetField, masks: ModulationMask,
                part: GroupPartition) -> list[Lattice]:
    """G*N masked warps, offset index varying fastest (group i, offset j at i*N + j)."""
    _check(feature, offsets, masks, part)
    out = []
    for i in range(offsets.groups):
        src = feature.data[part.channel_range(i)]
        for j in range(offsets.offsets):
            dx, dy = offsets.data[i, j, 0], offsets.data[i, j, 1]
            out.append(Lattice(warp_array(src, dx, dy) * masks.data[i, j][None], copy=False))
    return out


def cross_order(groups: int, offsets: int) -> list[int]:
    """Source index for each output slot: out[j*G + i] = in[i*N + j]."""
    return [i * offsets + j for j in range(offsets) for i in range(groups)]


def reorder_groups_cross(warped: Sequence, groups: int, offsets: int) -> list:
    if len(warped) != groups * offsets:
        raise InputError(f"expected {groups * offsets} entries, got {len(warped)}")
    return [warped[k] for k in cross_order(groups, offsets)]


def fuse_adjacent(groups: Sequence[Lattice], offsets: int, weights=None) -> list[Lattice]:
    """out[k] = sum_m weights[k][m] * in[k*N + m]."""
    if offsets < 1 or len(groups) % offsets:
        raise InputError(f"{len(groups)} entries do not fuse in runs of {offsets}")
    count = len(groups) // offsets
    w = np.full((count, offsets), 1.0 / offsets) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (count, offsets):
        raise InputError(f"fusion weights must be {count}x{offsets}")
    out = []
    for k in range(count):
        acc = w[k, 0] * groups[k * offsets].data
        for m in range(1, offsets):
            acc = acc + w[k, m] * groups[k * offsets + m].data
        out.append(Lattice(acc, copy=False))
    return out


def align(feature: Lattice, base: MotionField, residual: OffsetField,
          masks: ModulationMask | None = None, cfg: AlignConfig = AlignConfig()) -> Lattice:
    """Compose, warp per group and offset, reorder, fuse and concatenate."""
    if feature.channels != cfg.channels:
        raise InputError(f"feature has {feature.channels} channels, config says {cfg.channels}")
    if (residual.groups, residual.offsets) != (cfg.groups, cfg.offsets):
        raise InputError("residual offsets do not match the config (G, N)")
    if masks is None:
        masks = ModulationMask.ones(cfg.groups, cfg.offsets, feature.height, feature.width)
    part = GroupPartition(cfg.groups, cfg.channels)
    warped = warp_groups(feature, compose_offsets(base, residual), masks, part)
    if cfg.reorder:
        warped = reorder_groups_cross(warped, cfg.groups, cfg.offsets)
    return concat_groups(fuse_adjacent(warped, cfg.offsets, cfg.weights()))


def alignment_mse(aligned: Lattice, target: Lattice, masks: ModulationMask | None = None,
                  cfg: AlignConfig = AlignConfig(), region: np.ndarray | None = None) -> float:
    """MSE between ``aligned`` and what the same pipeline gives for a perfect warp.

    The reference runs ``target`` itself through identity warps with the same
    masks, reorder and fusion, so only misalignment is measured. ``region`` is
    an optional (H, W) boolean selection.
    """
    zeros = OffsetField.zeros(cfg.groups, cfg.offsets, target.height, target.width)
    ref = align(target, MotionField.zeros(target.height, target.width), zeros, masks, cfg)
    err = (aligned.data - ref.data) ** 2
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if not region.any():
            raise InputError("empty region")
        err = err[:, region]
    return float(err.mean())


def _shift(plane: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """out(r, q) = plane(r + dy, q + dx) with edge clamping."""
    h, w = plane.shape[-2:]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return plane[..., rows[:, None], cols[None, :]]


def block_match(cur: np.ndarray, ref: np.ndarray, block: int = 8, search: int = 4) -> np.ndarray:
    """Full-pel SAD search; returns (2, BH, BW) integer (dx, dy) per block.

    The vector points from a block of ``cur`` to its best match in ``ref``,
    so warping ``ref`` by it predicts ``cur``. Ties keep the smallest
    (|dx| + |dy|, dy, dx).
    """
    cur = np.asarray(cur, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if cur.ndim == 2:
        cur, ref = cur[None], ref[None]
    if cur.shape != ref.shape:
        raise InputError("frames differ in shape")
    _, h, w = cur.shape
    bh, bw = -(-h // block), -(-w // block)
    ph, pw = bh * block - h, bw * block - w
    cands = sorted(((dx, dy) for dy in range(-search, search + 1) for dx in range(-search, search + 1)),
                   key=lambda v: (abs(v[0]) + abs(v[1]), v[1], v[0]))
    best = np.full((bh, bw), np.inf)
    mv = np.zeros((2, bh, bw), dtype=np.int64)
    for dx, dy in cands:
        diff = np.abs(cur - _shift(ref, dx, dy)).sum(axis=0)
        diff = np.pad(diff, ((0, ph), (0, pw)))
        sad = diff.reshape(bh, block, bw, block).sum(axis=(1, 3))
        better = sad < best
        best[better] = sad[better]
        mv[0][better], mv[1][better] = dx, dy
    return mv


def block_motion_field(mv: np.ndarray, height: int, width: int, block: int = 8) -> MotionField:
    """Expand per-block vectors to a dense field."""
    dense = np.repeat(np.repeat(mv, block, axis=1), block, axis=2)[:, :height, :width]
    return MotionField(dense.astype(np.float64), copy=False)


def diversity_offsets(cur: Lattice, ref: Lattice, cfg: AlignConfig, block: int = 8, search: int = 4):
    """Block-matching stand-in for the learned offset predictor.

    Offset 0 of every group is the global (all-channel) block vector, offset
    1 the group's own block vector; further offsets repeat the group vector.
    Masks pick, per block, whichever candidate has the lower group SAD, and
    the matching config fuses with unit weights so the chosen warp passes
    through unscaled. Returns (base, residual, masks, cfg).
    """
    if cur.shape != ref.shape or cur.channels != cfg.channels:
        raise InputError("frames must match each other and the config")
    h, w = cur.height, cur.width
    g_count, n = cfg.groups, cfg.offsets
    part = GroupPartition(g_count, cfg.channels)
    glob = block_match(cur.data, ref.data, block, search)
    base = block_motion_field(glob, h, w, block)
    resid = np.zeros((g_count, n, 2, h, w))
    masks = np.zeros((g_count, n, h, w))
    bh, bw = glob.shape[1:]
    for g in range(g_count):
        chans = part.channel_range(g)
        c_cur, c_ref = cur.data[chans], ref.data[chans]
        own = block_match(c_cur, c_ref, block, search)
        sads = []
        for vec in (glob, own):
            dense = block_motion_field(vec, h, w, block).data
            err = np.abs(c_cur - warp_array(c_ref, dense[0], dense[1])).sum(axis=0)
            err = np.pad(err, ((0, bh * block - h), (0, bw * block - w)))
            sads.append(err.reshape(bh, block, bw, block).sum(axis=(1, 3)))
        dense_own = block_motion_field(own - glob, h, w, block).data
        for j in range(1, n):
            resid[g, j] = dense_own
        if n == 1:
            # single offset: keep the better of the two vectors per block
            pick = sads[1] < sads[0]
            sel = np.where(pick[None], own - glob, 0)
            resid[g, 0] = block_motion_field(sel, h, w, block).data
            masks[g, 0] = 1.0
            continue
        use_own = np.repeat(np.repeat(sads[1] < sads[0], block, 0), block, 1)[:h, :w]
        masks[g, 0] = ~use_own
        masks[g, 1] = use_own
    fused = cfg.fusion_weights
    if n > 1:
        fused = tuple((1.0,) * n for _ in range(g_count))
    out_cfg = AlignConfig(g_count, n, cfg.channels, cfg.reorder, fused)
    return base, OffsetField(resid, copy=False), ModulationMask(masks, copy=False), out_cfg


_OFF_HEADER = struct.Struct("<II")


def dump_offsets(offsets: OffsetField, masks: ModulationMask | None = None) -> bytes:
    """(G, N) header, then the offsets and optional masks as lattice dumps."""
    g, n, _, h, w = offsets.data.shape
    body = dump_lattice(Lattice(offsets.data.reshape(g * n * 2, h, w)))
    if masks is not None:
        body += dump_lattice(Lattice(masks.data.reshape(g * n, h, w)))
    return _OFF_HEADER.pack(g, n) + body


def load_offsets(buf: bytes, offset: int = 0):
    if len(buf) < offset + _OFF_HEADER.size:
        raise StreamError("truncated offset header")
    g, n = _OFF_HEADER.unpack_from(buf, offset)
    lat, pos = load_lattice(buf, offset + _OFF_HEADER.size)
    if lat.channels != g * n * 2:
        raise StreamError("offset payload does not match its (G, N) header")
    offs = OffsetField(lat.data.reshape(g, n, 2, lat.height, lat.width))
    masks = None
    if pos < len(buf):
        m, pos = load_lattice(buf, pos)
        if m.channels != g * n:
            raise StreamError("mask payload does not match its (G, N) header")
        masks = ModulationMask(m.data.reshape(g, n, m.height, m.width))
    return offs, masks, pos
