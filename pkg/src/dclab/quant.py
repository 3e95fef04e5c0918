"""Multi-granularity quantisation: qp table, channel and spatial-channel steps.

The effective step of a latent element is ``qs_global * qs_channel[c] *
qs_spatial_channel[c, r, q]``. Rounding is half away from zero so quantising
commutes with negation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, StreamError
from .lattice import Lattice

__all__ = [
    "QP_COUNT",
    "LAMBDAS",
    "QpTable",
    "QuantTables",
    "StepSet",
    "build_qp_table",
    "default_qp_table",
    "lambda_to_step",
    "round_half_away",
    "quantize",
    "dequantize",
    "tables_to_text",
    "tables_from_text",
]

QP_COUNT = 64
LAMBDAS = (85, 170, 380, 840)


@dataclass(frozen=True, eq=False)
class QpTable:
    """qp -> global step, plus per-channel step multipliers (default ones)."""

    steps: np.ndarray
    channel_steps: np.ndarray | None = None

    def __post_init__(self):
        steps = np.array(self.steps, dtype=np.float64)
        if steps.shape != (QP_COUNT,):
            raise InputError(f"qp table needs {QP_COUNT} entries")
        if not np.all(np.isfinite(steps)) or steps.min() <= 0:
            raise InputError("qp table entries must be finite and positive")
        if np.any(np.diff(steps) < 0):
            raise InputError("qp table must be non-decreasing in qp")
        steps.flags.writeable = False
        object.__setattr__(self, "steps", steps)
        if self.channel_steps is not None:
            ch = np.array(self.channel_steps, dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(ch)) or ch.size == 0 or ch.min() <= 0:
                raise InputError("channel steps must be finite and positive")
            ch.flags.writeable = False
            object.__setattr__(self, "channel_steps", ch)

    def step(self, qp: int) -> float:
        if not 0 <= int(qp) < QP_COUNT:
            raise InputError(f"qp {qp} outside 0..{QP_COUNT - 1}")
        return float(self.steps[int(qp)])

    def channel(self, channels: int) -> np.ndarray:
        if self.channel_steps is None:
            return np.ones(channels)
        if self.channel_steps.size != channels:
            raise InputError(
                f"table carries {self.channel_steps.size} channel steps, source has {channels}")
        return np.asarray(self.channel_steps)

    @property
    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.steps) > 0))

    def __eq__(self, other):
        if not isinstance(other, QpTable):
            return NotImplemented
        a, b = self.channel_steps, other.channel_steps
        same_ch = (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b))
        return bool(np.array_equal(self.steps, other.steps)) and same_ch

    __hash__ = None


@dataclass(frozen=True)
class QuantTables:
    """Encoder and decoder sides may carry different tables."""

    encoder: QpTable
    decoder: QpTable

    @classmethod
    def symmetric(cls, table: QpTable) -> "QuantTables":
        return cls(table, table)


def build_qp_table(anchor_qps: Sequence[int], anchor_steps: Sequence[float],
                   channel_steps=None) -> QpTable:
    """Interpolate log(step) linearly between anchors; flat beyond the ends."""
    qps = np.asarray(anchor_qps, dtype=np.float64)
    steps = np.asarray(anchor_steps, dtype=np.float64)
    if qps.shape != (4,) or steps.shape != (4,):
        raise InputError("need exactly four anchors")
    if np.any(np.diff(qps) <= 0) or qps[0] < 0 or qps[-1] > QP_COUNT - 1:
        raise InputError("anchor qps must be strictly increasing within 0..63")
    if np.any(steps <= 0) or np.any(np.diff(steps) < 0):
        raise InputError("anchor steps must be positive and non-decreasing")
    table = np.exp(np.interp(np.arange(QP_COUNT), qps, np.log(steps)))
    table[qps.astype(int)] = steps  # anchors exactly, no exp/log round trip
    return QpTable(table, channel_steps)


def lambda_to_step(lam: float) -> float:
    """High-rate optimum of R + lam * D for a uniform quantiser: step^2 = 6 / (lam ln 2)."""
    return math.sqrt(6.0 / (lam * math.log(2.0)))


def default_qp_table(channel_steps=None) -> QpTable:
    """Anchors at qp 0, 21, 42, 63 from the four training lambdas, largest first."""
    steps = [lambda_to_step(lam) for lam in sorted(LAMBDAS, reverse=True)]
    return build_qp_table((0, 21, 42, 63), steps, channel_steps)


@dataclass(frozen=True, eq=False)
class StepSet:
    global_step: float
    channel_steps: np.ndarray
    spatial_steps: Lattice | None = None  # None means all ones

    def __post_init__(self):
        ch = np.array(self.channel_steps, dtype=np.float64).reshape(-1)
        if not (math.isfinite(self.global_step) and self.global_step > 0):
            raise InputError("global step must be positive")
        if ch.size == 0 or not np.all(np.isfinite(ch)) or ch.min() <= 0:
            raise InputError("channel steps must be positive")
        if self.spatial_steps is not None and self.spatial_steps.data.min() <= 0:
            raise InputError("spatial-channel steps must be positive")
        ch.flags.writeable = False
        object.__setattr__(self, "channel_steps", ch)

    @classmethod
    def uniform(cls, step: float, channels: int) -> "StepSet":
        return cls(step, np.ones(channels))

    def effective(self, shape: tuple[int, int, int]) -> np.ndarray:
        c, h, w = shape
        if self.channel_steps.size != c:
            raise InputError(f"{self.channel_steps.size} channel steps for {c} channels")
        eff = self.global_step * self.channel_steps[:, None, None] * np.ones((1, h, w))
        if self.spatial_steps is not None:
            if self.spatial_steps.shape != shape:
                raise InputError("spatial-channel steps must match the latent shape")
            eff = eff * self.spatial_steps.data
        return eff


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def quantize(y: Lattice, steps: StepSet) -> np.ndarray:
    """Integer (C, H, W) array: round(y / effective step), half away from zero."""
    return round_half_away(y.data / steps.effective(y.shape)).astype(np.int64)


def dequantize(q: np.ndarray, steps: StepSet) -> Lattice:
    q = np.asarray(q)
    if q.ndim != 3:
        raise InputError("quantised latent must be (C, H, W)")
    return Lattice(q * steps.effective(q.shape), copy=False)


def _table_lines(table: QpTable) -> list[str]:
    lines = [f"{qp} {step!r}" for qp, step in enumerate(table.steps.tolist())]
    if table.channel_steps is not None:
        lines += [f"ch {c} {s!r}" for c, s in enumerate(table.channel_steps.tolist())]
    return lines


def tables_to_text(tables: QuantTables) -> str:
    """Per side: a ``[encoder]``/``[decoder]`` header, 64 ``qp step`` lines, optional ``ch`` lines."""
    out = ["[encoder]", *_table_lines(tables.encoder), "[decoder]", *_table_lines(tables.decoder)]
    return "\n".join(out) + "\n"


def tables_from_text(text: str) -> QuantTables:
    sides: dict[str, tuple[list, list]] = {}
    current = None
    try:
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                current = line.strip("[]")
                sides[current] = ([], [])
                continue
            parts = line.split()
            if parts[0] == "ch":
                sides[current][1].append(float(parts[2]))
            else:
                if int(parts[0]) != len(sides[current][0]):
                    raise ValueError(f"qp {parts[0]} out of sequence")
                sides[current][0].append(float(parts[1]))
        enc, dec = sides["encoder"], sides["decoder"]
    except (KeyError, ValueError, IndexError, TypeError) as exc:
        raise StreamError(f"malformed qp table text: {exc}") from None
    return QuantTables(QpTable(enc[0], enc[1] or None), QpTable(dec[0], dec[1] or None))
