"""Toy video codec wiring motion, alignment, quantisation and scheduled coding.

Per frame: the source is scaled by the global and channel steps, passed
through the latent transform and rounded after the spatial-channel step. A
4x-downsampled side channel is coded first, then the latent step by step
under the coding schedule, each symbol modelled by a discretised Gaussian
whose mean and scale come from the fitted context predictors. Inter frames
also see the previous reconstructed latent, motion-compensated by block
matching and the alignment module.

The entropy model only ever uses decoder-side values (decoder qp table,
reconstructed latents), so encoder and decoder stay in lock step even when
their qp tables differ.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import AlignConfig, OffsetField, align, block_match, block_motion_field
from .context import (INTER, INTRA, FeatureSpec, PredictorSet, Sample, box_down,
                      fit_predictors, side_from_symbols, step_features)
from .entropy import (DEFAULT_ALPHABET, SCALE_FLOOR, SCALE_TABLE, MEAN_RESOLUTION, GaussianTable,
                      IndexedDecoder, encode_indexed, frame_stream, read_stream)
from .errors import ConfigError, InputError, StreamError
from .lattice import Lattice, dump_lattice, load_lattice
from .metrics import FrameWeightPattern, Yuv420Frame, frame_weight, mse, psnr, to_yuv444
from .quant import QP_COUNT, QpTable, QuantTables, round_half_away
from .schedule import KINDS, CodingSchedule, build_schedule

__all__ = [
    "MAGIC",
    "VERSION",
    "TRANSFORMS",
    "SequenceConfig",
    "ContainerHeader",
    "FrameStats",
    "EncodeResult",
    "DecodeResult",
    "forward_transform",
    "inverse_transform",
    "latent_shape",
    "encode_sequence",
    "decode_sequence",
    "parse_container",
    "fit_codec_predictors",
    "ingest_raw_yuv420",
    "write_raw_yuv420",
    "yuv420_to_lattice",
    "dump_frames",
    "load_frames",
]

MAGIC = b"DCLB"
VERSION = 1
TRANSFORMS = ("identity", "haar")
SYM_MIN, SYM_MAX = DEFAULT_ALPHABET

_HEADER = struct.Struct("<4sHIIHHBBIBIHHBBBB")
_CHUNK = struct.Struct("<BBB")
_SIDE_PARAM = struct.Struct("<hB")


@dataclass(frozen=True)
class SequenceConfig:
    intra_period: int = 32
    frames_to_code: int = 96
    qp: int = 32
    schedule: str = "quadtree"
    align: AlignConfig | None = None  # None: one group per latent channel, one offset
    weights: FrameWeightPattern = FrameWeightPattern()
    lambda_index: int = 0
    transform: str = "identity"
    side_factor: int = 4
    block: int = 8
    search: int = 4
    peak: float = 1.0

    def __post_init__(self):
        if self.intra_period < 1 or self.frames_to_code < 1:
            raise ConfigError("intra_period and frames_to_code must be >= 1")
        if not 0 <= self.qp < QP_COUNT:
            raise ConfigError(f"qp must lie in 0..{QP_COUNT - 1}")
        if self.schedule not in KINDS:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if not 1 <= self.side_factor <= 255 or not 1 <= self.block <= 255 or not 0 <= self.search <= 127:
            raise ConfigError("side_factor, block and search must fit in a byte")

    def is_intra(self, t: int) -> bool:
        return t % self.intra_period == 0

    def align_config(self, channels: int) -> AlignConfig:
        if self.align is None:
            return AlignConfig(channels, 1, channels, False)
        if self.align.channels != channels:
            raise ConfigError(f"align config expects {self.align.channels} channels, latent has {channels}")
        return self.align


def latent_shape(shape: tuple[int, int, int], transform: str) -> tuple[int, int, int]:
    c, h, w = shape
    if transform == "identity":
        return c, h, w
    if h % 2 or w % 2:
        raise InputError("the Haar transform needs even frame sizes")
    return 4 * c, h // 2, w // 2


def forward_transform(x: np.ndarray, transform: str) -> np.ndarray:
    """Identity, or an orthonormal 2x2 Haar split into (LL, LH, HL, HH) per channel."""
    if transform == "identity":
        return np.array(x, dtype=np.float64)
    latent_shape(x.shape, transform)
    a, b = x[:, 0::2, 0::2], x[:, 0::2, 1::2]
    c, d = x[:, 1::2, 0::2], x[:, 1::2, 1::2]
    bands = np.stack([a + b + c + d, a - b + c - d, a + b - c - d, a - b - c + d], axis=1)
    return 0.5 * bands.reshape(-1, *bands.shape[2:])


def inverse_transform(y: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return np.array(y, dtype=np.float64)
    ll, lh, hl, hh = (y.reshape(-1, 4, *y.shape[1:])[:, k] for k in range(4))
    c, h2, w2 = ll.shape
    x = np.empty((c, 2 * h2, 2 * w2))
    x[:, 0::2, 0::2] = 0.5 * (ll + lh + hl + hh)
    x[:, 0::2, 1::2] = 0.5 * (ll - lh + hl - hh)
    x[:, 1::2, 0::2] = 0.5 * (ll + lh - hl - hh)
    x[:, 1::2, 1::2] = 0.5 * (ll - lh - hl + hh)
    return x


@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    channels: int
    group_count: int
    schedule: str
    qp: int
    frame_count: int
    transform: str
    intra_period: int
    align_groups: int
    align_offsets: int
    align_reorder: bool
    side_factor: int
    block: int
    search: int
    version: int = VERSION

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, self.width, self.height, self.channels,
                            self.group_count, KINDS.index(self.schedule), self.qp, self.frame_count,
                            TRANSFORMS.index(self.transform), self.intra_period, self.align_groups,
                            self.align_offsets, int(self.align_reorder), self.side_factor,
                            self.block, self.search)

    @classmethod
    def unpack(cls, buf: bytes) -> "ContainerHeader":
        if len(buf) < _HEADER.size:
            raise StreamError("truncated container header")
        (magic, version, width, height, channels, groups, sched, qp, count, transform, period,
         ag, an, ar, sf, block, search) = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise StreamError("not a DCLB container")
        if version != VERSION:
            raise StreamError(f"unsupported container version {version}")
        if sched >= len(KINDS) or transform >= len(TRANSFORMS):
            raise StreamError("unknown schedule or transform id")
        return cls(width, height, channels, groups, KINDS[sched], qp, count, TRANSFORMS[transform],
                   period, ag, an, bool(ar), sf, block, search, version)

    def config(self) -> SequenceConfig:
        lat_c = latent_shape((self.channels, self.height, self.width), self.transform)[0]
        acfg = AlignConfig(self.align_groups, self.align_offsets, lat_c, self.align_reorder)
        return SequenceConfig(self.intra_period, self.frame_count, self.qp, self.schedule, acfg,
                              transform=self.transform, side_factor=self.side_factor,
                              block=self.block, search=self.search)


@dataclass(frozen=True)
class FrameStats:
    t: int
    frame_type: str
    qp: int
    side_bits: int
    latent_bits: int
    motion_bits: int
    rate_bits: int  # r_t: side + latent payload bits; motion is reported separately
    bpp: float
    distortion: float  # MSE against the source frame
    quality: float  # PSNR (dB)
    weight: float
    ideal_bits: float  # sum of -log2 p over coded symbols


@dataclass
class EncodeResult:
    bitstream: bytes
    stats: list
    reconstructions: list  # Lattice per frame
    symbols: list  # integer latent per frame


@dataclass
class DecodeResult:
    frames: list
    symbols: list
    first_frame: int = 0


def _as_tables(tables) -> QuantTables:
    if isinstance(tables, QuantTables):
        return tables
    if isinstance(tables, QpTable):
        return QuantTables.symmetric(tables)
    raise ConfigError("expected a QpTable or QuantTables")


def _latent_steps(table: QpTable, qp: int, src_channels: int, transform: str,
                  lat_shape: tuple[int, int, int], qs_sc: Lattice | None):
    """Per-latent-element step (decoder or encoder side) and the pre-transform scale."""
    pre = table.step(qp) * table.channel(src_channels)
    per_lat = pre if transform == "identity" else np.repeat(pre, 4)
    eff = per_lat[:, None, None] * np.ones(lat_shape)
    if qs_sc is not None:
        if qs_sc.shape != lat_shape:
            raise InputError(f"spatial-channel steps must be {lat_shape}")
        eff = eff * qs_sc.data
    return pre, per_lat, eff


def _clamp(q: np.ndarray) -> np.ndarray:
    return np.clip(q, SYM_MIN, SYM_MAX).astype(np.int64)


@dataclass
class _Analysis:
    q: np.ndarray  # integer latent
    yhat: np.ndarray  # decoder-domain reconstructed latent
    zq: np.ndarray  # integer side symbols
    side: np.ndarray  # decoder-domain side channel at latent resolution
    eff: np.ndarray  # decoder-domain latent steps


def _analyse(x: np.ndarray, tables: QuantTables, qp: int, transform: str, side_factor: int,
             qs_sc: Lattice | None) -> _Analysis:
    """Quantise one frame: global/channel steps before the transform, qs_sc after."""
    c = x.shape[0]
    lat = latent_shape(x.shape, transform)
    pre_e, lat_e, _ = _latent_steps(tables.encoder, qp, c, transform, lat, None)
    _, lat_d, eff_d = _latent_steps(tables.decoder, qp, c, transform, lat, qs_sc)
    y = forward_transform(x / pre_e[:, None, None], transform)
    sc = 1.0 if qs_sc is None else qs_sc.data
    q = _clamp(round_half_away(y / sc))
    # side channel: low-pass of the scaled latent, one symbol per side_factor^2 block
    zq = _clamp(round_half_away(box_down(y, side_factor)))
    side = side_from_symbols(zq * lat_d[:, None, None], 1.0, lat, side_factor)
    return _Analysis(q, q * eff_d, zq, side, eff_d)


def _side_params(zq: np.ndarray, table: GaussianTable):
    means = zq.reshape(zq.shape[0], -1).mean(axis=1)
    spread = np.sqrt(((zq.reshape(zq.shape[0], -1) - means[:, None]) ** 2).mean(axis=1))
    mk, sk = table.keys(means, spread)
    return mk, sk


def _side_rows(mk, sk, count_per_channel: int, table: GaussianTable) -> np.ndarray:
    rows = table.rows(mk / MEAN_RESOLUTION, SCALE_TABLE[sk])
    return np.repeat(rows, count_per_channel)


def _temporal(prev_yhat: np.ndarray, mv: np.ndarray, acfg: AlignConfig, block: int) -> np.ndarray:
    c, h, w = prev_yhat.shape
    base = block_motion_field(mv, h, w, block)
    zeros = OffsetField.zeros(acfg.groups, acfg.offsets, h, w)
    return align(Lattice(prev_yhat, copy=False), base, zeros, None, acfg).data


def _blocks(schedule: CodingSchedule):
    for step in schedule.steps:
        for g in range(schedule.group_count):
            pos = step.positions[g]
            if len(pos):
                yield step.step_index, g, pos


def _model_rows(X, pred, eff_rows, table):
    mu, sd = pred.predict(X)
    return table.rows(mu / eff_rows, sd / eff_rows)


def _encode_latent(a: _Analysis, schedule: CodingSchedule, pset: PredictorSet, frame_type: str,
                   temporal, table: GaussianTable):
    c_total = a.q.shape[0]
    cpg = c_total // schedule.group_count
    syms, rows = [], []
    if schedule.shares_predictors:
        pred = pset.get(frame_type, 0, 0)
        pos = np.argwhere(np.ones((schedule.height, schedule.width), dtype=bool))
        X = step_features(a.yhat, schedule, 0, pos, pred.layout, a.side, temporal)
        e = a.eff[:, pos[:, 0], pos[:, 1]].ravel()
        r = _model_rows(X, pred, e, table)
        n = len(pos)
        # decoder order: position by position, channels within a position
        syms.append(a.q[:, pos[:, 0], pos[:, 1]].T.ravel())
        rows.append(r.reshape(c_total, n).T.ravel())
    else:
        for s, g, pos in _blocks(schedule):
            pred = pset.get(frame_type, schedule.step_class(s), g)
            chans = slice(g * cpg, (g + 1) * cpg)
            X = step_features(a.yhat, schedule, g, pos, pred.layout, a.side, temporal)
            rows.append(_model_rows(X, pred, a.eff[chans, pos[:, 0], pos[:, 1]].ravel(), table))
            syms.append(a.q[chans, pos[:, 0], pos[:, 1]].ravel())
    sym = np.concatenate(syms) if syms else np.zeros(0, dtype=np.int64)
    row = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    return sym, row


def _decode_latent(dec: IndexedDecoder, eff: np.ndarray, side: np.ndarray, schedule: CodingSchedule,
                   pset: PredictorSet, frame_type: str, temporal, table: GaussianTable):
    c_total = eff.shape[0]
    cpg = c_total // schedule.group_count
    q = np.zeros(eff.shape, dtype=np.int64)
    yhat = np.zeros(eff.shape)
    if schedule.shares_predictors:
        pred = pset.get(frame_type, 0, 0)
        for s, g, pos in _blocks(schedule):
            X = step_features(yhat, schedule, 0, pos, pred.layout, side, temporal)
            rr, cc = pos[:, 0], pos[:, 1]
            r = _model_rows(X, pred, eff[:, rr, cc].ravel(), table)
            vals = dec.decode(r, table.cdf, table.lengths) + SYM_MIN
            q[:, rr, cc] = vals.reshape(c_total, -1)
            yhat[:, rr, cc] = q[:, rr, cc] * eff[:, rr, cc]
        return q, yhat
    for s, g, pos in _blocks(schedule):
        pred = pset.get(frame_type, schedule.step_class(s), g)
        chans = slice(g * cpg, (g + 1) * cpg)
        rr, cc = pos[:, 0], pos[:, 1]
        X = step_features(yhat, schedule, g, pos, pred.layout, side, temporal)
        r = _model_rows(X, pred, eff[chans, rr, cc].ravel(), table)
        vals = dec.decode(r, table.cdf, table.lengths) + SYM_MIN
        q[chans, rr, cc] = vals.reshape(cpg, -1)
        yhat[chans, rr, cc] = q[chans, rr, cc] * eff[chans, rr, cc]
    return q, yhat


def _frames_array(frames) -> list[np.ndarray]:
    out = []
    for f in frames:
        arr = f.data if isinstance(f, Lattice) else np.asarray(f, dtype=np.float64)
        if arr.ndim != 3:
            raise InputError("frames must be (C, H, W)")
        out.append(arr)
    if not out:
        raise InputError("no frames to code")
    if any(a.shape != out[0].shape for a in out):
        raise InputError("all frames must share one shape")
    return out


def encode_sequence(frames: Sequence, cfg: SequenceConfig, predictors: PredictorSet, tables,
                    frame_qps: Sequence[int] | None = None,
                    spatial_steps: dict | None = None) -> EncodeResult:
    """Code up to ``cfg.frames_to_code`` frames into a DCLB container.

    ``frame_qps`` overrides the qp per frame; ``spatial_steps`` maps frame
    index to a latent-shaped Lattice of spatial-channel steps carried in the
    stream.
    """
    tables = _as_tables(tables)
    xs = _frames_array(frames)[: cfg.frames_to_code]
    c, h, w = xs[0].shape
    lat = latent_shape((c, h, w), cfg.transform)
    acfg = cfg.align_config(lat[0])
    schedule = build_schedule(cfg.schedule, lat[1], lat[2])
    if lat[0] % schedule.group_count:
        raise ConfigError(f"{lat[0]} latent channels do not split into {schedule.group_count} groups")
    for ft in {INTRA, INTER} & {INTRA if cfg.is_intra(t) else INTER for t in range(len(xs))}:
        predictors.check(schedule, ft)
    qps = [cfg.qp] * len(xs) if frame_qps is None else [int(v) for v in frame_qps]
    if len(qps) < len(xs) or any(not 0 <= v < QP_COUNT for v in qps):
        raise ConfigError("frame_qps must give a valid qp for every frame")
    spatial_steps = spatial_steps or {}
    header = ContainerHeader(w, h, c, schedule.group_count, cfg.schedule, cfg.qp, len(xs),
                             cfg.transform, cfg.intra_period, acfg.groups, acfg.offsets,
                             acfg.reorder, cfg.side_factor, cfg.block, cfg.search)
    out = io.BytesIO()
    out.write(header.pack())
    table = GaussianTable()
    stats, recons, symbols = [], [], []
    prev = None
    for t, x in enumerate(xs):
        ftype = INTRA if cfg.is_intra(t) else INTER
        qs_sc = spatial_steps.get(t)
        a = _analyse(x, tables, qps[t], cfg.transform, cfg.side_factor, qs_sc)
        chunk = io.BytesIO()
        chunk.write(_CHUNK.pack(int(ftype == INTER), qps[t], int(qs_sc is not None)))
        if qs_sc is not None:
            chunk.write(dump_lattice(qs_sc))
        temporal = None
        motion_bits = 0
        if ftype == INTER:
            mv = block_match(forward_transform(x, cfg.transform), prev, cfg.block, cfg.search)
            chunk.write(struct.pack("<HH", mv.shape[1], mv.shape[2]))
            chunk.write(mv.astype(np.int8).tobytes())
            motion_bits = 8 * mv.size
            temporal = _temporal(prev, mv, acfg, cfg.block)
        mk, sk = _side_params(a.zq, table)
        for m, s in zip(mk.tolist(), sk.tolist()):
            chunk.write(_SIDE_PARAM.pack(m, s))
        side_rows = _side_rows(mk, sk, a.zq[0].size, table)
        side_sym = a.zq.ravel()
        lat_sym, lat_rows = _encode_latent(a, schedule, predictors, ftype, temporal, table)
        side_payload = encode_indexed(side_sym - SYM_MIN, side_rows, table.cdf)
        lat_payload = encode_indexed(lat_sym - SYM_MIN, lat_rows, table.cdf)
        chunk.write(frame_stream(side_sym.size, side_payload))
        chunk.write(frame_stream(lat_sym.size, lat_payload))
        body = chunk.getvalue()
        out.write(struct.pack("<I", len(body)))
        out.write(body)

        recon = Lattice(inverse_transform(a.yhat, cfg.transform), copy=False)
        side_bits, lat_bits = 8 * len(side_payload), 8 * len(lat_payload)
        d = mse(x, recon)
        ideal = float(table.bits(side_sym, side_rows).sum() + table.bits(lat_sym, lat_rows).sum())
        stats.append(FrameStats(t, ftype, qps[t], side_bits, lat_bits, motion_bits,
                                side_bits + lat_bits, (side_bits + lat_bits) / (h * w), d,
                                psnr(x, recon, cfg.peak), frame_weight(cfg.weights, t), ideal))
        recons.append(recon)
        symbols.append(a.q)
        prev = a.yhat
    return EncodeResult(out.getvalue(), stats, recons, symbols)


def parse_container(buf: bytes) -> tuple[ContainerHeader, list[tuple[int, int]]]:
    """Header plus (offset, length) of every frame chunk."""
    header = ContainerHeader.unpack(buf)
    pos = _HEADER.size
    chunks = []
    for _ in range(header.frame_count):
        if pos + 4 > len(buf):
            raise StreamError("container ends before its last frame chunk")
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        if pos + n > len(buf):
            raise StreamError("frame chunk runs past the end of the container")
        chunks.append((pos, n))
        pos += n
    if pos != len(buf):
        raise StreamError("trailing bytes after the last frame chunk")
    return header, chunks


def decode_sequence(bitstream: bytes, predictors: PredictorSet, tables,
                    start: int = 0) -> DecodeResult:
    """Decode every frame from ``start`` on; ``start`` must be an intra frame.

    Chunks before ``start`` are skipped by their length prefix and never read.
    """
    tables = _as_tables(tables)
    header, chunks = parse_container(bitstream)
    cfg = header.config()
    if not 0 <= start < header.frame_count:
        raise InputError(f"start frame {start} outside 0..{header.frame_count - 1}")
    if not cfg.is_intra(start):
        raise InputError(f"frame {start} is not an intra frame")
    c, h, w = header.channels, header.height, header.width
    lat = latent_shape((c, h, w), cfg.transform)
    schedule = build_schedule(cfg.schedule, lat[1], lat[2])
    if schedule.group_count != header.group_count:
        raise StreamError("group count in header does not match the schedule")
    acfg = cfg.align_config(lat[0])
    table = GaussianTable()
    frames, symbols = [], []
    prev = None
    for t in range(start, header.frame_count):
        off, n = chunks[t]
        body = bitstream[off:off + n]
        try:
            is_inter, qp, has_sc = _CHUNK.unpack_from(body, 0)
        except struct.error:
            raise StreamError(f"frame {t}: truncated chunk header") from None
        ftype = INTER if is_inter else INTRA
        if ftype != (INTRA if cfg.is_intra(t) else INTER):
            raise StreamError(f"frame {t}: frame type disagrees with the intra period")
        pos = _CHUNK.size
        qs_sc = None
        if has_sc:
            qs_sc, pos = load_lattice(body, pos)
        _, lat_d, eff = _latent_steps(tables.decoder, qp, c, cfg.transform, lat, qs_sc)
        temporal = None
        try:
            if ftype == INTER:
                if prev is None:
                    raise StreamError(f"frame {t}: inter frame without a reference")
                bh, bw = struct.unpack_from("<HH", body, pos)
                pos += 4
                mv = np.frombuffer(body, dtype=np.int8, count=2 * bh * bw, offset=pos)
                mv = mv.astype(np.int64).reshape(2, bh, bw)
                pos += 2 * bh * bw
                temporal = _temporal(prev, mv, acfg, cfg.block)
            params = [_SIDE_PARAM.unpack_from(body, pos + i * _SIDE_PARAM.size) for i in range(lat[0])]
        except (struct.error, ValueError):
            raise StreamError(f"frame {t}: truncated chunk") from None
        pos += lat[0] * _SIDE_PARAM.size
        mk = np.array([p[0] for p in params], dtype=np.int64)
        sk = np.array([p[1] for p in params], dtype=np.int64)
        if sk.size and sk.max() >= len(SCALE_TABLE):
            raise StreamError(f"frame {t}: side scale index out of range")
        sh, sw = -(-lat[1] // cfg.side_factor), -(-lat[2] // cfg.side_factor)
        side_count, side_payload, pos = read_stream(body, pos)
        lat_count, lat_payload, pos = read_stream(body, pos)
        if side_count != lat[0] * sh * sw or lat_count != int(np.prod(lat)):
            raise StreamError(f"frame {t}: symbol counts do not match the frame size")
        side_rows = _side_rows(mk, sk, sh * sw, table)
        zq = IndexedDecoder(side_payload).decode(side_rows, table.cdf, table.lengths) + SYM_MIN
        zq = zq.reshape(lat[0], sh, sw)
        side = side_from_symbols(zq * lat_d[:, None, None], 1.0, lat, cfg.side_factor)
        q, yhat = _decode_latent(IndexedDecoder(lat_payload), eff, side, schedule, predictors,
                                 ftype, temporal, table)
        frames.append(Lattice(inverse_transform(yhat, cfg.transform), copy=False))
        symbols.append(q)
        prev = yhat
    return DecodeResult(frames, symbols, start)


def fit_codec_predictors(sequences: Sequence[Sequence], cfg: SequenceConfig, tables, qp: int | None = None,
                         ridge_lambda: float = 1e-6, spec: FeatureSpec = FeatureSpec(),
                         scale_model: str = "constant", inter: bool = True) -> PredictorSet:
    """Fit intra (and inter) predictors on what the decoder would see at ``qp``.

    Every frame contributes an intra sample; frames after the first of each
    sequence also contribute inter samples with their motion-compensated
    reference. The scale floor is the entropy floor expressed at ``qp``.
    """
    tables = _as_tables(tables)
    qp = cfg.qp if qp is None else qp
    intra, inter_s = [], []
    for seq in sequences:
        xs = _frames_array(seq)
        lat = latent_shape(xs[0].shape, cfg.transform)
        acfg = cfg.align_config(lat[0])
        prev = None
        for x in xs:
            a = _analyse(x, tables, qp, cfg.transform, cfg.side_factor, None)
            intra.append(Sample(a.yhat, a.side))
            if prev is not None:
                mv = block_match(forward_transform(x, cfg.transform), prev, cfg.block, cfg.search)
                inter_s.append(Sample(a.yhat, a.side, _temporal(prev, mv, acfg, cfg.block)))
            prev = a.yhat
    floor = SCALE_FLOOR * tables.decoder.step(qp)
    pset = fit_predictors(intra, cfg.schedule, ridge_lambda, spec, INTRA, floor, scale_model)
    if inter and inter_s:
        pset = fit_predictors(inter_s, cfg.schedule, ridge_lambda, spec, INTER, floor, scale_model,
                              existing=pset)
    return pset


def ingest_raw_yuv420(path, width: int, height: int, frames: int | None = None) -> list[Yuv420Frame]:
    """Planar 8-bit YUV420 frames scaled to [0, 1]; chroma stays centred at 0.5."""
    if width < 1 or height < 1:
        raise InputError("frame size must be positive")
    cw, ch = (width + 1) // 2, (height + 1) // 2
    size = width * height + 2 * cw * ch
    raw = Path(path).read_bytes()
    avail = len(raw) // size
    if len(raw) % size:
        raise InputError(f"file size {len(raw)} is not a whole number of {width}x{height} frames")
    count = avail if frames is None else frames
    if count > avail:
        raise InputError(f"asked for {count} frames, file holds {avail}")
    out = []
    for i in range(count):
        buf = np.frombuffer(raw, dtype=np.uint8, count=size, offset=i * size).astype(np.float64) / 255.0
        y = buf[: width * height].reshape(height, width)
        u = buf[width * height: width * height + cw * ch].reshape(ch, cw)
        v = buf[width * height + cw * ch:].reshape(ch, cw)
        out.append(Yuv420Frame(y, u, v))
    return out


def write_raw_yuv420(path, frames: Sequence[Yuv420Frame]) -> None:
    with open(path, "wb") as fh:
        for f in frames:
            for plane in (f.y, f.u, f.v):
                fh.write(np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8).tobytes())


def yuv420_to_lattice(frame: Yuv420Frame, method: str = "bilinear") -> Lattice:
    """Unified 3-channel input: chroma upsampled to luma size, recentred at 0."""
    full = to_yuv444(frame, method).data.copy()
    full[1:] -= 0.5
    return Lattice(full, copy=False)


_SEQ = struct.Struct("<4sI")


def dump_frames(frames: Sequence[Lattice]) -> bytes:
    """Frame-sequence file: magic, count, then one lattice dump per frame."""
    return _SEQ.pack(b"DCLS", len(frames)) + b"".join(dump_lattice(f) for f in frames)


def load_frames(buf: bytes) -> list[Lattice]:
    if len(buf) < _SEQ.size:
        raise StreamError("truncated frame file")
    magic, count = _SEQ.unpack_from(buf, 0)
    if magic != b"DCLS":
        raise StreamError("not a frame-sequence file")
    pos, out = _SEQ.size, []
    for _ in range(count):
        lat, pos = load_lattice(buf, pos)
        out.append(lat)
    if pos != len(buf):
        raise StreamError("trailing bytes after the last frame")
    return out
