"""Deterministic synthetic sources with known statistics.

Randomness comes from a counter-based splitmix64 generator: draw ``i`` of
stream ``s`` under seed ``k`` is ``mix64(key(k, s) + (i + 1) * GOLDEN)``,
so every sample is a pure function of (seed, stream, index) and identical on
any platform with IEEE doubles. Normals use Box-Muller on pairs of draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError
from .lattice import Lattice, MotionField

__all__ = [
    "GOLDEN",
    "mix64",
    "uniforms",
    "normals",
    "GaussMarkovSpec",
    "gauss_markov_field",
    "Region",
    "Occluder",
    "MotionSceneSpec",
    "MotionScene",
    "moving_sequence",
    "two_motion_spec",
    "conditional_stats_oracle",
    "separable_covariance",
]

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD1B54A32D192ED03)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _raw(seed: int, stream: int, n: int) -> np.ndarray:
    base = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    tag = np.array([stream & 0xFFFFFFFF], dtype=np.uint64) * _STREAM
    key = mix64(base ^ tag)[0]
    counters = np.arange(1, n + 1, dtype=np.uint64)
    return mix64(key + counters * GOLDEN)


def uniforms(seed: int, n: int, stream: int = 0) -> np.ndarray:
    """``n`` doubles in [0, 1) with 53 random bits each."""
    return (_raw(seed, stream, n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def normals(seed: int, shape, stream: int = 0) -> np.ndarray:
    """Standard normal draws via Box-Muller."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u = uniforms(seed, 2 * m, stream)
    radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * m)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n].reshape(shape)


@dataclass(frozen=True)
class GaussMarkovSpec:
    height: int
    width: int
    channels: int = 1
    rho_h: float = 0.0
    rho_v: float = 0.0
    rho_c: float = 0.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise InputError("field dimensions must be positive")
        for rho in (self.rho_h, self.rho_v, self.rho_c):
            if not -1.0 < rho < 1.0:
                raise InputError("correlations must lie in (-1, 1)")
        if self.sigma <= 0:
            raise InputError("sigma must be positive")


def _ar1(x: np.ndarray, rho: float, axis: int) -> np.ndarray:
    """Stationary unit-variance AR(1) recursion along ``axis`` (in place)."""
    if rho == 0.0:
        return x
    x = np.moveaxis(x, axis, 0)
    gain = np.sqrt(1.0 - rho * rho)
    for i in range(1, x.shape[0]):
        x[i] = rho * x[i - 1] + gain * x[i]
    return np.moveaxis(x, 0, axis)


def _field(spec: GaussMarkovSpec, stream: int = 0) -> np.ndarray:
    x = normals(spec.seed, (spec.channels, spec.height, spec.width), stream)
    # construction order: channels, rows, columns
    x = _ar1(x, spec.rho_c, 0)
    x = _ar1(x, spec.rho_v, 1)
    x = _ar1(x, spec.rho_h, 2)
    return spec.sigma * x


def gauss_markov_field(spec: GaussMarkovSpec) -> Lattice:
    """Separable AR(1) field with covariance sigma^2 rho_c^|dc| rho_v^|dr| rho_h^|dq|."""
    return Lattice(_field(spec), copy=False)


def separable_covariance(spec: GaussMarkovSpec, a: Sequence[int], b: Sequence[int]) -> float:
    """Covariance between two (channel, row, col) offsets of a separable field."""
    dc, dr, dq = (abs(int(u) - int(v)) for u, v in zip(a, b))
    return spec.sigma ** 2 * spec.rho_c ** dc * spec.rho_v ** dr * spec.rho_h ** dq


def conditional_stats_oracle(spec: GaussMarkovSpec, context: Sequence[Sequence[int]]):
    """Exact linear-Gaussian prediction of a site from neighbours.

    ``context`` holds offsets ``(dr, dc)`` or ``(dch, dr, dc)`` relative to
    the predicted site, each within +-4 in space. Returns the regression
    weights (one per offset) and the conditional standard deviation.
    """
    offs = [tuple(int(v) for v in o) for o in context]
    offs = [(0, *o) if len(o) == 2 else o for o in offs]
    for o in offs:
        if len(o) != 3 or max(abs(o[1]), abs(o[2])) > 4:
            raise InputError(f"offset {o} outside the 9x9 neighbourhood")
    if not offs:
        return np.zeros(0), spec.sigma
    if len(set(offs)) != len(offs) or (0, 0, 0) in offs:
        raise InputError("context offsets must be distinct and exclude the site itself")
    cov = np.array([[separable_covariance(spec, a, b) for b in offs] for a in offs])
    cross = np.array([separable_covariance(spec, (0, 0, 0), a) for a in offs])
    weights = np.linalg.solve(cov, cross)
    var = spec.sigma ** 2 - float(cross @ weights)
    return weights, float(np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class Region:
    """A textured rectangle (frame-0 placement) translating by ``motion`` per frame."""

    top: int
    left: int
    height: int
    width: int
    motion: tuple[int, int] = (0, 0)  # (dx, dy)


@dataclass(frozen=True)
class Occluder:
    """A flat rectangle drawn over everything else."""

    top: int
    left: int
    height: int
    width: int
    value: float = 0.0
    motion: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class MotionSceneSpec:
    frames: int
    height: int
    width: int
    channels: int = 1
    rho_h: float = 0.9
    rho_v: float = 0.9
    rho_c: float = 0.0
    sigma: float = 1.0
    background_motion: tuple[int, int] = (0, 0)
    regions: tuple = ()
    occluder: Occluder | None = None
    innovation: float = 0.0  # fresh per-frame noise std, 0 for pure translation
    seed: int = 0

    def __post_init__(self):
        if self.frames < 1 or min(self.height, self.width, self.channels) < 1:
            raise InputError("scene dimensions must be positive")


@dataclass(frozen=True)
class MotionScene:
    frames: list  # Lattice per frame
    motions: list  # MotionField per frame: forward motion of the visible layer
    occlusions: list  # bool (H, W) occluder footprint per frame
    valid: list  # bool (H, W): warp of frame t-1 by -motion reproduces frame t
    layers: list = field(repr=False, default_factory=list)


def _layer_texture(spec: MotionSceneSpec, h: int, w: int, stream: int) -> np.ndarray:
    gm = GaussMarkovSpec(h, w, spec.channels, spec.rho_h, spec.rho_v, spec.rho_c,
                         spec.sigma, spec.seed)
    return _field(gm, stream)


def moving_sequence(spec: MotionSceneSpec) -> MotionScene:
    """Layered translating textures with ground-truth motion and occlusion maps.

    Each layer owns a texture padded by its total travel, so frame t samples
    the texture at ``p - motion * t`` without ever leaving it.
    """
    t_max = spec.frames - 1
    h, w, c = spec.height, spec.width, spec.channels
    layers = [((0, 0, h, w), spec.background_motion)]
    layers += [((r.top, r.left, r.height, r.width), r.motion) for r in spec.regions]
    textures = []
    for i, ((_, _, lh, lw), (mx, my)) in enumerate(layers):
        pad_y, pad_x = abs(my) * t_max, abs(mx) * t_max
        tex = _layer_texture(spec, lh + 2 * pad_y, lw + 2 * pad_x, stream=i + 1)
        textures.append((tex, pad_y, pad_x))

    frames, motions, occl, valid, layer_maps = [], [], [], [], []
    rows, cols = np.mgrid[0:h, 0:w]
    for t in range(spec.frames):
        img = np.zeros((c, h, w))
        lmap = np.full((h, w), -1, dtype=np.int64)
        mot = np.zeros((2, h, w))
        for i, (((top, left, lh, lw), (mx, my)), (tex, pad_y, pad_x)) in enumerate(zip(layers, textures)):
            r0, c0 = top + my * t, left + mx * t
            inside = (rows >= r0) & (rows < r0 + lh) & (cols >= c0) & (cols < c0 + lw)
            if i == 0:
                inside[:] = True
            tr = rows[inside] - r0 + pad_y if i else rows[inside] - my * t + pad_y
            tc = cols[inside] - c0 + pad_x if i else cols[inside] - mx * t + pad_x
            img[:, inside] = tex[:, tr, tc]
            lmap[inside] = i
            mot[0][inside] = mx
            mot[1][inside] = my
        foot = np.zeros((h, w), dtype=bool)
        if spec.occluder is not None:
            o = spec.occluder
            r0, c0 = o.top + o.motion[1] * t, o.left + o.motion[0] * t
            foot = (rows >= r0) & (rows < r0 + o.height) & (cols >= c0) & (cols < c0 + o.width)
            img[:, foot] = o.value
            lmap[foot] = len(layers)
            mot[0][foot] = o.motion[0]
            mot[1][foot] = o.motion[1]
        if spec.innovation > 0:
            img += spec.innovation * normals(spec.seed, img.shape, stream=1000 + t)
        ok = np.zeros((h, w), dtype=bool)
        if t > 0:
            sr = rows - mot[1].astype(np.int64)
            sc = cols - mot[0].astype(np.int64)
            inb = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
            prev = layer_maps[-1]
            same = np.zeros_like(inb)
            same[inb] = prev[sr[inb], sc[inb]] == lmap[inb]
            ok = inb & same & ~foot
            ok[inb] &= ~occl[-1][sr[inb], sc[inb]]
        frames.append(Lattice(img, copy=False))
        motions.append(MotionField(mot, copy=False))
        occl.append(foot)
        valid.append(ok)
        layer_maps.append(lmap)
    return MotionScene(frames, motions, occl, valid, layer_maps)


def two_motion_spec(seed: int, *, channels: int = 48, size: int = 64, frames: int = 2,
                    max_motion: int = 3, rho: float = 0.9, rho_c: float = 0.5) -> MotionSceneSpec:
    """Background plus one foreground rectangle with a different translation.

    Motions, rectangle size and placement are drawn from the seed; the two
    motions always differ.
    """
    u = uniforms(seed, 8, stream=77)
    span = 2 * max_motion + 1
    bg = (int(u[0] * span) - max_motion, int(u[1] * span) - max_motion)
    fg = bg
    k = 2
    while fg == bg:
        v = uniforms(seed, 2, stream=78 + k)
        fg = (int(v[0] * span) - max_motion, int(v[1] * span) - max_motion)
        k += 1
    fh = size // 3 + int(u[4] * size // 4)
    fw = size // 3 + int(u[5] * size // 4)
    top = 8 + int(u[6] * max(1, size - fh - 16))
    left = 8 + int(u[7] * max(1, size - fw - 16))
    return MotionSceneSpec(frames, size, size, channels, rho, rho, rho_c, 1.0,
                           background_motion=bg,
                           regions=(Region(top, left, fh, fw, fg),), seed=seed)
