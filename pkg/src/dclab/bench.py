"""Benchmark harness: schedule RD curves, BD-rate matrices and the
hierarchical-quality allocation demo."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import SequenceConfig, encode_sequence, fit_codec_predictors
from .context import FeatureSpec
from .errors import InputError
from .metrics import FrameWeightPattern, RdCurve, bd_rate, frame_weight
from .quant import LAMBDAS, QP_COUNT, default_qp_table
from .sources import GaussMarkovSpec, gauss_markov_field

__all__ = [
    "BenchResult",
    "config_hash",
    "benchmark_schedules",
    "curves_csv",
    "bd_matrix_csv",
    "AllocationResult",
    "measure_rd",
    "hierarchical_allocation_demo",
    "allocation_csv",
]


def config_hash(config: dict) -> str:
    """Short SHA-256 of the canonical JSON form of a config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class BenchResult:
    schedules: list
    qps: list
    points: list  # (schedule, qp, bpp, quality) averaged over seeds
    curves: list  # RdCurve per schedule entry
    bd: np.ndarray  # bd[i, j]: schedule j measured against anchor i, percent
    config: dict
    config_hash: str


def _spec_at(spec: GaussMarkovSpec, seed: int) -> GaussMarkovSpec:
    return dataclasses.replace(spec, seed=seed)


def benchmark_schedules(spec: GaussMarkovSpec, schedules: Sequence[str], qps: Sequence[int],
                        seeds: Sequence[int] = (1, 2, 3), train_seeds: Sequence[int] = (1001, 1002),
                        tables=None, fit_qp: int | None = None, ridge_lambda: float = 1e-6,
                        feature_spec: FeatureSpec = FeatureSpec(), transform: str = "identity",
                        peak: float = 1.0) -> BenchResult:
    """Intra-code seeded Gauss-Markov frames under each schedule at each qp.

    Predictors are trained on frames from ``train_seeds`` (disjoint from the
    test seeds), at each qp unless ``fit_qp`` pins one operating point.
    """
    if not schedules or not qps or not seeds:
        raise InputError("need at least one schedule, qp and seed")
    if set(seeds) & set(train_seeds):
        raise InputError("training and test seeds overlap")
    tables = default_qp_table() if tables is None else tables
    tests = [gauss_markov_field(_spec_at(spec, s)) for s in seeds]
    train = [[gauss_markov_field(_spec_at(spec, s))] for s in train_seeds]
    cache: dict[tuple[str, int], tuple[float, float]] = {}
    points, curves = [], []
    for kind in schedules:
        rows = []
        for qp in qps:
            key = (kind, int(qp))
            if key not in cache:
                cfg = SequenceConfig(qp=int(qp), schedule=kind, frames_to_code=1, intra_period=1,
                                     transform=transform, peak=peak)
                pset = fit_codec_predictors(train, cfg, tables, qp=fit_qp, ridge_lambda=ridge_lambda,
                                            spec=feature_spec, inter=False)
                stats = [encode_sequence([x], cfg, pset, tables).stats[0] for x in tests]
                cache[key] = (float(np.mean([s.bpp for s in stats])),
                              float(np.mean([s.quality for s in stats])))
            bpp, quality = cache[key]
            rows.append((bpp, quality))
            points.append((kind, int(qp), bpp, quality))
        curves.append(RdCurve.from_points(rows))
    n = len(schedules)
    bd = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                bd[i, j] = bd_rate(curves[i], curves[j])
    config = {
        "source": dataclasses.asdict(spec) | {"seed": None},
        "schedules": list(schedules),
        "qps": [int(q) for q in qps],
        "seeds": list(seeds),
        "train_seeds": list(train_seeds),
        "fit_qp": fit_qp,
        "ridge_lambda": ridge_lambda,
        "feature_spec": dataclasses.asdict(feature_spec),
        "transform": transform,
        "qp_steps": [float(v) for v in (tables.decoder.steps if hasattr(tables, "decoder")
                                        else tables.steps)],
    }
    return BenchResult(list(schedules), [int(q) for q in qps], points, curves, bd, config,
                       config_hash(config))


def curves_csv(result: BenchResult) -> str:
    """Columns: schedule,qp,bpp,quality."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schedule", "qp", "bpp", "quality"])
    for kind, qp, bpp, q in result.points:
        w.writerow([kind, qp, repr(bpp), repr(q)])
    return buf.getvalue()


def bd_matrix_csv(labels: Sequence[str], bd: np.ndarray) -> str:
    """Columns: anchor,test,bdrate_percent (one row per ordered pair, diagonal included)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["anchor", "test", "bdrate_percent"])
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            w.writerow([a, b, f"{bd[i, j]:.6f}"])
    return buf.getvalue()


@dataclass
class AllocationResult:
    qps: list  # chosen qp per frame
    rates: list  # r_t in bits
    qualities: list  # PSNR per frame
    weights: list
    phase_qps: list  # chosen qp per phase of the pattern
    table: dict  # qp -> (mean bpp, mean MSE) used by the allocator


def measure_rd(frames: Sequence, cfg: SequenceConfig | None = None, predictors=None, tables=None,
               candidate_qps: Sequence[int] = tuple(range(0, QP_COUNT, 3)),
               train_frames: Sequence | None = None) -> dict:
    """Intra-code every frame at every candidate qp; returns qp -> list of FrameStats."""
    if not frames:
        raise InputError("no frames")
    tables = default_qp_table() if tables is None else tables
    cfg = cfg or SequenceConfig(schedule="quadtree", transform="haar")
    cfg = dataclasses.replace(cfg, frames_to_code=1, intra_period=1)
    if predictors is None:
        if train_frames is None:
            raise InputError("need predictors or training frames")
        predictors = fit_codec_predictors([[f] for f in train_frames], cfg, tables, inter=False)
    measured = {}
    for qp in candidate_qps:
        c = dataclasses.replace(cfg, qp=int(qp))
        measured[int(qp)] = [encode_sequence([f], c, predictors, tables).stats[0] for f in frames]
    return measured


def hierarchical_allocation_demo(frames: Sequence, pattern: FrameWeightPattern = FrameWeightPattern(),
                                 lam: float = LAMBDAS[2], cfg: SequenceConfig | None = None,
                                 predictors=None, tables=None,
                                 candidate_qps: Sequence[int] = tuple(range(0, QP_COUNT, 3)),
                                 train_frames: Sequence | None = None,
                                 measured: dict | None = None) -> AllocationResult:
    """Toy rate allocator for the weighted loss r_t + lam * w_t * d_t.

    Every frame is measured intra at each candidate qp (or ``measured`` is
    reused from ``measure_rd``); the allocator then picks, per phase of the
    weight pattern, the qp minimising mean bpp plus lam * w * mean MSE over
    all frames, ties going to the larger qp. Frames are reported at their
    phase's qp.
    """
    if lam < 0:
        raise InputError("lambda must be >= 0")
    if measured is None:
        measured = measure_rd(frames, cfg, predictors, tables, candidate_qps, train_frames)
    if any(len(st) != len(frames) for st in measured.values()):
        raise InputError("measurements do not cover every frame")
    table = {qp: (float(np.mean([s.bpp for s in st])), float(np.mean([s.distortion for s in st])))
             for qp, st in measured.items()}
    phase_qps = []
    for w in pattern.weights:
        best = None
        for qp in sorted(table):
            r, d = table[qp]
            loss = r + lam * w * d
            if best is None or loss <= best[0]:
                best = (loss, qp)
        phase_qps.append(best[1])
    qps, rates, quals, weights = [], [], [], []
    for t in range(len(frames)):
        qp = phase_qps[t % pattern.period]
        s = measured[qp][t]
        qps.append(qp)
        rates.append(s.rate_bits)
        quals.append(s.quality)
        weights.append(frame_weight(pattern, t))
    return AllocationResult(qps, rates, quals, weights, phase_qps, table)


def allocation_csv(result: AllocationResult, frame_type: str = "intra") -> str:
    """Columns: t,frame_type,bits,quality,weight."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "frame_type", "bits", "quality", "weight"])
    for t, (bits, q, wt) in enumerate(zip(result.rates, result.qualities, result.weights)):
        w.writerow([t, frame_type, bits, repr(q), repr(wt)])
    return buf.getvalue()
