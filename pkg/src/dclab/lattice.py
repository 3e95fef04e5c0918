"""Multi-channel grids and the sampling/warping/grouping primitives.

Index convention is channel-major, row-major within a channel. Flows are
stored as ``(dx, dy)`` = (column, row) displacement, so warping reads the
source at ``(col + dx, row + dy)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, StreamError

__all__ = [
    "Lattice",
    "MotionField",
    "GroupPartition",
    "bilinear_sample",
    "sample_plane",
    "warp",
    "warp_array",
    "split_groups",
    "concat_groups",
    "permute_groups",
    "inverse_permutation",
    "dump_lattice",
    "load_lattice",
]

_HEADER = struct.Struct("<III")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class Lattice:
    """An immutable C x H x W grid of float64 values."""

    __slots__ = ("_data",)

    def __init__(self, data, *, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InputError(f"lattice needs a non-empty (C, H, W) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("lattice values must be finite")
        self._data = _frozen(arr)

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Lattice":
        return cls(np.zeros((channels, height, width)), copy=False)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def channels(self) -> int:
        return self._data.shape[0]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    def plane(self, c: int) -> np.ndarray:
        return self._data[c]

    def __eq__(self, other):
        if not isinstance(other, Lattice):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __repr__(self):
        return f"Lattice(channels={self.channels}, height={self.height}, width={self.width})"


class MotionField:
    """Per-position displacement ``(dx, dy)`` stored as a (2, H, W) array."""

    __slots__ = ("_data",)

    def __init__(self, data, *, copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=copy)
        if arr.ndim != 3 or arr.shape[0] != 2 or min(arr.shape) < 1:
            raise InputError(f"motion field needs shape (2, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError("motion values must be finite")
        self._data = _frozen(arr)

    @classmethod
    def constant(cls, height: int, width: int, dx: float, dy: float) -> "MotionField":
        arr = np.empty((2, height, width))
        arr[0] = dx
        arr[1] = dy
        return cls(arr, copy=False)

    @classmethod
    def zeros(cls, height: int, width: int) -> "MotionField":
        return cls(np.zeros((2, height, width)), copy=False)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dx(self) -> np.ndarray:
        return self._data[0]

    @property
    def dy(self) -> np.ndarray:
        return self._data[1]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    def __repr__(self):
        return f"MotionField(height={self.height}, width={self.width})"


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous, equal-size channel groups."""

    group_count: int
    channels: int

    def __post_init__(self):
        if self.group_count < 1 or self.channels < 1:
            raise InputError("group count and channels must be positive")
        if self.channels % self.group_count:
            raise InputError(
                f"{self.channels} channels cannot be split into {self.group_count} equal groups"
            )

    @property
    def channels_per_group(self) -> int:
        return self.channels // self.group_count

    def channel_range(self, g: int) -> range:
        if not 0 <= g < self.group_count:
            raise InputError(f"group {g} out of range")
        k = self.channels_per_group
        return range(g * k, (g + 1) * k)


def bilinear_sample(plane, x: float, y: float) -> float:
    """Sample a 2-D plane at real coordinates, clamping to the border."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InputError("sample coordinates must be finite")
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim == 3 and plane.shape[0] == 1:
        plane = plane[0]
    if plane.ndim != 2 or plane.size == 0:
        raise InputError("bilinear_sample needs a non-empty 2-D plane")
    return float(sample_plane(plane, np.array([x]), np.array([y]))[0])


def sample_plane(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised border-clamped bilinear sampling of ``plane`` at (xs, ys)."""
    h, w = plane.shape
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = plane[y0, x0] * (1.0 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1.0 - fx) + plane[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def warp_array(src: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Warp every channel of a (C, H, W) array by the same (H, W) flow."""
    c, h, w = src.shape
    rows, cols = np.mgrid[0:h, 0:w]
    xs = np.clip(cols + dx, 0.0, w - 1)
    ys = np.clip(rows + dy, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = src[:, y0, x0] * (1.0 - fx) + src[:, y0, x1] * fx
    bot = src[:, y1, x0] * (1.0 - fx) + src[:, y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def warp(src: Lattice, flow: MotionField) -> Lattice:
    """out(c, r, q) = src_c sampled at (q + dx(r, q), r + dy(r, q))."""
    if (flow.height, flow.width) != (src.height, src.width):
        raise InputError(
            f"flow is {flow.height}x{flow.width} but lattice is {src.height}x{src.width}"
        )
    return Lattice(warp_array(src.data, flow.dx, flow.dy), copy=False)


def split_groups(src: Lattice, part: GroupPartition) -> list[Lattice]:
    if part.channels != src.channels:
        raise InputError(f"partition covers {part.channels} channels, lattice has {src.channels}")
    k = part.channels_per_group
    return [Lattice(src.data[g * k:(g + 1) * k]) for g in range(part.group_count)]


def concat_groups(groups: Sequence[Lattice]) -> Lattice:
    if not groups:
        raise InputError("nothing to concatenate")
    shapes = {(g.height, g.width) for g in groups}
    if len(shapes) != 1:
        raise InputError("groups differ in spatial size")
    return Lattice(np.concatenate([g.data for g in groups], axis=0), copy=False)


def _check_permutation(order: Sequence[int], n: int) -> list[int]:
    order = [int(i) for i in order]
    if sorted(order) != list(range(n)):
        raise InputError(f"{order} is not a permutation of 0..{n - 1}")
    return order


def permute_groups(groups: Sequence, order: Sequence[int]) -> list:
    """out[k] = groups[order[k]]."""
    order = _check_permutation(order, len(groups))
    return [groups[i] for i in order]


def inverse_permutation(order: Sequence[int]) -> list[int]:
    order = _check_permutation(order, len(order))
    inv = [0] * len(order)
    for k, i in enumerate(order):
        inv[i] = k
    return inv


def dump_lattice(lat: Lattice) -> bytes:
    """Little-endian {u32 C, u32 H, u32 W} followed by float64 values."""
    return _HEADER.pack(*lat.shape) + lat.data.astype("<f8").tobytes()


def load_lattice(buf: bytes, offset: int = 0) -> tuple[Lattice, int]:
    """Parse a lattice dump at ``offset``; returns (lattice, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise StreamError("truncated lattice header")
    c, h, w = _HEADER.unpack_from(buf, offset)
    offset += _HEADER.size
    nbytes = 8 * c * h * w
    if len(buf) - offset < nbytes:
        raise StreamError("truncated lattice payload")
    arr = np.frombuffer(buf, dtype="<f8", count=c * h * w, offset=offset).reshape(c, h, w)
    return Lattice(arr.astype(np.float64)), offset + nbytes
