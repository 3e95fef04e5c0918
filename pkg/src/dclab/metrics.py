"""Rate-distortion accounting, colour conversion and BD-rate."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InputError, NumericalError
from .lattice import Lattice, sample_plane

__all__ = [
    "PSNR_CAP",
    "DEFAULT_WEIGHTS",
    "FrameWeightPattern",
    "LossTerms",
    "RdCurve",
    "Yuv420Frame",
    "frame_weight",
    "rd_loss",
    "mse",
    "psnr",
    "weighted_yuv_psnr",
    "yuv420_weighted_psnr",
    "KR_KB",
    "rgb_to_yuv",
    "yuv_to_rgb",
    "chroma_down",
    "chroma_up",
    "to_yuv420",
    "to_yuv444",
    "bd_rate",
    "BD_METHOD",
    "MIN_CURVE_POINTS",
    "curve_to_csv",
    "curve_from_csv",
    "bd_report_csv",
    "macs_conv",
    "macs_depthwise_separable",
]

PSNR_CAP = 99.0
DEFAULT_WEIGHTS = (0.5, 1.2, 0.5, 0.9)
BD_METHOD = "pchip-log10"
MIN_CURVE_POINTS = 4


@dataclass(frozen=True)
class FrameWeightPattern:
    weights: tuple = DEFAULT_WEIGHTS

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if not w or min(w) <= 0:
            raise InputError("frame weights must be positive")
        object.__setattr__(self, "weights", w)

    @property
    def period(self) -> int:
        return len(self.weights)


def frame_weight(pattern: FrameWeightPattern, t: int) -> float:
    return pattern.weights[t % pattern.period]


@dataclass(frozen=True)
class LossTerms:
    rate: float  # r_t, bits
    distortion: float  # d_t
    lam: float  # global lambda


def rd_loss(terms: Sequence[LossTerms], pattern: FrameWeightPattern = FrameWeightPattern(),
            mode: str = "mean") -> float:
    """sum_t (r_t + lambda * w_t * d_t), divided by T in ``mean`` mode."""
    if not terms:
        raise InputError("no frames")
    total = math.fsum(x.rate + x.lam * frame_weight(pattern, t) * x.distortion
                      for t, x in enumerate(terms))
    if mode == "mean":
        return total / len(terms)
    if mode == "sum":
        return total
    raise InputError(f"unknown loss mode {mode!r}")


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Lattice) else np.asarray(x, dtype=np.float64)


def mse(a, b) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs report ``PSNR_CAP``."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return 10.0 * math.log10(peak * peak / err)


def weighted_yuv_psnr(psnr_y: float, psnr_u: float, psnr_v: float) -> float:
    return (6.0 * psnr_y + psnr_u + psnr_v) / 8.0


@dataclass(frozen=True, eq=False)
class Yuv420Frame:
    y: np.ndarray  # (H, W)
    u: np.ndarray  # (ceil(H/2), ceil(W/2))
    v: np.ndarray

    def __post_init__(self):
        h, w = self.y.shape
        want = ((h + 1) // 2, (w + 1) // 2)
        if self.u.shape != want or self.v.shape != want:
            raise InputError(f"chroma planes must be {want} for a {h}x{w} luma plane")


def yuv420_weighted_psnr(ref: Yuv420Frame, rec: Yuv420Frame, peak: float = 1.0) -> float:
    return weighted_yuv_psnr(psnr(ref.y, rec.y, peak), psnr(ref.u, rec.u, peak),
                             psnr(ref.v, rec.v, peak))


KR_KB = {"bt601": (0.299, 0.114), "bt709": (0.2126, 0.0722)}


def _matrix(standard: str) -> np.ndarray:
    try:
        kr, kb = KR_KB[standard.lower().replace(".", "")]
    except KeyError:
        raise InputError(f"unknown colour standard {standard!r}") from None
    kg = 1.0 - kr - kb
    return np.array([
        [kr, kg, kb],
        [-kr / (2 * (1 - kb)), -kg / (2 * (1 - kb)), 0.5],
        [0.5, -kg / (2 * (1 - kr)), -kb / (2 * (1 - kr))],
    ])


def rgb_to_yuv(frame, standard: str = "bt709") -> Lattice:
    """Full-range RGB -> Y'CbCr with chroma centred on zero."""
    rgb = _arr(frame)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise InputError("expected a (3, H, W) RGB frame")
    return Lattice(np.einsum("ij,jhw->ihw", _matrix(standard), rgb), copy=False)


def yuv_to_rgb(frame, standard: str = "bt709") -> Lattice:
    """Inverse of ``rgb_to_yuv`` in closed form."""
    yuv = _arr(frame)
    if yuv.ndim != 3 or yuv.shape[0] != 3:
        raise InputError("expected a (3, H, W) YUV frame")
    kr, kb = KR_KB[standard.lower().replace(".", "")]
    kg = 1.0 - kr - kb
    y, u, v = yuv
    r = y + 2 * (1 - kr) * v
    b = y + 2 * (1 - kb) * u
    g = (y - kr * r - kb * b) / kg
    return Lattice(np.stack([r, g, b]), copy=False)


def chroma_down(plane: np.ndarray) -> np.ndarray:
    """2x2 box average; odd sizes replicate the last row/column."""
    p = np.asarray(plane, dtype=np.float64)
    h, w = p.shape
    p = np.pad(p, ((0, h % 2), (0, w % 2)), mode="edge")
    return 0.25 * (p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2])


def chroma_up(plane: np.ndarray, shape: tuple[int, int], method: str = "bilinear") -> np.ndarray:
    """Back to luma resolution. Chroma samples sit at 2x2 block centres."""
    p = np.asarray(plane, dtype=np.float64)
    h, w = shape
    if method == "nearest":
        return np.repeat(np.repeat(p, 2, axis=0), 2, axis=1)[:h, :w]
    if method != "bilinear":
        raise InputError(f"unknown upsampling method {method!r}")
    ys = (np.arange(h) - 0.5) / 2.0
    xs = (np.arange(w) - 0.5) / 2.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return sample_plane(p, xx.ravel(), yy.ravel()).reshape(h, w)


def to_yuv420(frame) -> Yuv420Frame:
    yuv = _arr(frame)
    return Yuv420Frame(yuv[0].copy(), chroma_down(yuv[1]), chroma_down(yuv[2]))


def to_yuv444(frame: Yuv420Frame, method: str = "bilinear") -> Lattice:
    shape = frame.y.shape
    return Lattice(np.stack([frame.y, chroma_up(frame.u, shape, method),
                             chroma_up(frame.v, shape, method)]), copy=False)


@dataclass(frozen=True, eq=False)
class RdCurve:
    bpp: np.ndarray
    quality: np.ndarray

    def __post_init__(self):
        bpp = np.array(self.bpp, dtype=np.float64).reshape(-1)
        q = np.array(self.quality, dtype=np.float64).reshape(-1)
        if bpp.shape != q.shape or bpp.size < MIN_CURVE_POINTS:
            raise InputError(f"curve needs matching bpp/quality arrays with >= {MIN_CURVE_POINTS} points")
        if bpp.min() <= 0 or not np.all(np.isfinite(q)):
            raise InputError("bpp must be positive and quality finite")
        if np.any(np.diff(bpp) <= 0):
            raise InputError("curve bpp must be strictly increasing")
        object.__setattr__(self, "bpp", bpp)
        object.__setattr__(self, "quality", q)

    @classmethod
    def from_points(cls, points: Iterable[tuple[float, float]]) -> "RdCurve":
        pts = sorted(points)
        return cls([p[0] for p in pts], [p[1] for p in pts])

    def __len__(self):
        return self.bpp.size


def _log_rate_interp(curve: RdCurve) -> PchipInterpolator:
    order = np.argsort(curve.quality, kind="stable")
    q = curve.quality[order]
    if np.any(np.diff(q) <= 0):
        raise NumericalError("quality must be strictly monotone along the curve")
    return PchipInterpolator(q, np.log10(curve.bpp[order]))


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Average bitrate difference (%) of ``test`` vs ``anchor`` at equal quality.

    log10(bpp) is interpolated against quality with PCHIP and integrated over
    the shared quality interval. Negative values mean ``test`` saves bits.
    """
    lo = max(anchor.quality.min(), test.quality.min())
    hi = min(anchor.quality.max(), test.quality.max())
    if not hi > lo:
        raise NumericalError("RD curves have no overlapping quality range")
    fa, ft = _log_rate_interp(anchor), _log_rate_interp(test)
    avg = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo)
    return float((10.0 ** avg - 1.0) * 100.0)


def curve_to_csv(curve: RdCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bpp", "quality"])
    for b, q in zip(curve.bpp.tolist(), curve.quality.tolist()):
        writer.writerow([repr(b), repr(q)])
    return buf.getvalue()


def curve_from_csv(text: str) -> RdCurve:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or set(rows[0]) != {"bpp", "quality"}:
        raise InputError('curve CSV needs the header "bpp,quality"')
    return RdCurve.from_points((float(r["bpp"]), float(r["quality"])) for r in rows)


def bd_report_csv(rows: Iterable[tuple[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pair", "bdrate_percent", "method"])
    for pair, value in rows:
        writer.writerow([pair, f"{value:.6f}", BD_METHOD])
    return buf.getvalue()


def macs_conv(k: int, cin: int, cout: int, h: int, w: int) -> int:
    """Multiply-accumulates of a stride-1 'same' K x K convolution."""
    return k * k * cin * cout * h * w


def macs_depthwise_separable(k: int, cin: int, cout: int, h: int, w: int) -> int:
    """Depthwise K x K per input channel, then a 1x1 pointwise mix."""
    return (k * k * cin + cin * cout) * h * w
