"""Linear context models standing in for the convolutional entropy network.

For every (frame type, step, group) a ridge regression maps the contexts a
schedule makes available (side channel, temporal context, already-coded
spatial neighbours, other groups' channels at the same position) to the
mean of a Gaussian; the scale is the residual spread of that fit.

Feature rows follow the coding order of a step: for each channel of the
group, for each position the step lists. Neighbour values are read only
where the schedule has coded them; elsewhere the value is 0 and the paired
availability flag is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .entropy import SCALE_FLOOR, GaussianParams
from .errors import ConfigError, ContractViolation, InputError, NumericalError, StreamError
from .lattice import Lattice
from .schedule import AXIS_OFFSETS, DIAGONAL_OFFSETS, CodingSchedule, build_schedule
from .sources import normals

__all__ = [
    "INTRA",
    "INTER",
    "FeatureSpec",
    "FeatureLayout",
    "StepPredictor",
    "PredictorSet",
    "Sample",
    "feature_layout",
    "step_features",
    "extract_features",
    "fit_predictors",
    "predict_params",
    "side_channel",
    "side_from_symbols",
    "box_down",
    "predictors_to_text",
    "predictors_from_text",
]

INTRA, INTER = "intra", "inter"
_CANON = 8  # layouts are read off the interior of an 8x8 grid


@dataclass(frozen=True)
class FeatureSpec:
    """Which context sources a predictor may use.

    ``offsets`` overrides the axis/diagonal switches with an explicit list of
    (dr, dc) neighbour offsets.
    """

    side: bool = True
    temporal: bool = True
    axis: bool = True
    diagonal: bool = True
    cross_group: bool = True
    offsets: tuple | None = None

    def __post_init__(self):
        if self.offsets is not None:
            object.__setattr__(self, "offsets", tuple(tuple(int(v) for v in o) for o in self.offsets))
        spatial = bool(self.offsets) if self.offsets is not None else (self.axis or self.diagonal)
        if not (self.side or self.temporal or spatial or self.cross_group):
            raise InputError("a feature spec needs at least one context source")

    def spatial_offsets(self) -> tuple:
        if self.offsets is not None:
            return self.offsets
        return (AXIS_OFFSETS if self.axis else ()) + (DIAGONAL_OFFSETS if self.diagonal else ())


@dataclass(frozen=True)
class FeatureLayout:
    side: bool
    temporal: bool
    spatial: tuple  # (dr, dc) offsets, each contributing value + flag
    cross: tuple  # earlier-step slots, each contributing value + flag

    @property
    def names(self) -> tuple:
        out = []
        if self.side:
            out.append("side")
        if self.temporal:
            out.append("temporal")
        for dr, dc in self.spatial:
            out += [f"n[{dr},{dc}]", f"n[{dr},{dc}]?"]
        for k in self.cross:
            out += [f"x[{k}]", f"x[{k}]?"]
        return tuple(out)

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def spatial_value_columns(self) -> list[int]:
        start = int(self.side) + int(self.temporal)
        return [start + 2 * i for i in range(len(self.spatial))]

    @property
    def cross_value_columns(self) -> list[int]:
        start = int(self.side) + int(self.temporal) + 2 * len(self.spatial)
        return [start + 2 * i for i in range(len(self.cross))]


@lru_cache(maxsize=None)
def _canonical(kind: str) -> CodingSchedule:
    return build_schedule(kind, _CANON, _CANON)


def feature_layout(kind: str, step_class: int, group: int, spec: FeatureSpec,
                   frame_type: str = INTRA) -> FeatureLayout:
    """Features a (kind, step, group) predictor sees, independent of grid size.

    Spatial offsets and cross-group slots are kept when they are available
    to at least one interior position of that step on a canonical grid.
    """
    sched = _canonical(kind)
    order = sched.order
    if not 0 <= group < sched.group_count:
        raise InputError(f"group {group} out of range for {kind}")
    steps = sched.steps_in_class(step_class)
    mine = np.isin(order[group], steps)
    mine[[0, -1], :] = False
    mine[:, [0, -1]] = False
    rr, cc = np.nonzero(mine)
    cur = order[group, rr, cc]
    spatial = tuple(o for o in spec.spatial_offsets()
                    if np.any(order[group, rr + o[0], cc + o[1]] < cur))
    cross = ()
    if spec.cross_group and sched.group_count > 1:
        others = [g for g in range(sched.group_count) if g != group]
        slots = set()
        for g in others:
            earlier = order[g, rr, cc] < cur
            slots.update(order[g, rr, cc][earlier].tolist())
        cross = tuple(sorted(slots))
    temporal = spec.temporal and frame_type == INTER
    return FeatureLayout(spec.side, temporal, spatial, cross)


def step_features(latent: np.ndarray, schedule: CodingSchedule, group: int, positions: np.ndarray,
                  layout: FeatureLayout, side: np.ndarray | None = None,
                  temporal: np.ndarray | None = None, audit: bool = False) -> np.ndarray:
    """Feature matrix for every channel of ``group`` at ``positions``.

    ``latent`` is the (C, H, W) array of values decoded so far; only entries
    coded before each position's own step are read. Rows run channel-major:
    all positions of the group's first channel, then the next channel.
    """
    g_count = schedule.group_count
    c_total, h, w = latent.shape
    if c_total % g_count:
        raise ConfigError(f"{c_total} channels do not split into {g_count} groups")
    cpg = c_total // g_count
    order = schedule.order
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    rr, cc = pos[:, 0], pos[:, 1]
    n = rr.shape[0]
    cur = order[group, rr, cc]
    chans = range(group * cpg, (group + 1) * cpg)
    X = np.zeros((cpg * n, layout.size))
    col = 0
    if layout.side:
        if side is None:
            raise InputError("layout needs a side channel")
        X[:, col] = np.concatenate([side[c, rr, cc] for c in chans])
        col += 1
    if layout.temporal:
        if temporal is None:
            raise InputError("layout needs a temporal context")
        X[:, col] = np.concatenate([temporal[c, rr, cc] for c in chans])
        col += 1
    for dr, dc in layout.spatial:
        nr, nc = rr + dr, cc + dc
        inb = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        nr_c, nc_c = np.clip(nr, 0, h - 1), np.clip(nc, 0, w - 1)
        ok = inb & (order[group, nr_c, nc_c] < cur)
        if audit and np.any(order[group, nr_c, nc_c][ok] >= cur[ok]):
            raise ContractViolation("spatial feature read a position not yet coded")
        flag = ok.astype(np.float64)
        X[:, col] = np.concatenate([np.where(ok, latent[c, nr_c, nc_c], 0.0) for c in chans])
        X[:, col + 1] = np.tile(flag, cpg)
        col += 2
    for k in layout.cross:
        hit = np.zeros(n, dtype=bool)
        src = np.zeros(n, dtype=np.int64)
        for g in range(g_count):
            if g == group:
                continue
            take = ~hit & (order[g, rr, cc] == k) & (k < cur)
            src[take] = g
            hit |= take
        if audit and np.any(order[src[hit], rr[hit], cc[hit]] >= cur[hit]):
            raise ContractViolation("cross-group feature read a channel not yet coded")
        vals = []
        for c in chans:
            partner = src * cpg + (c - group * cpg)
            vals.append(np.where(hit, latent[partner, rr, cc], 0.0))
        X[:, col] = np.concatenate(vals)
        X[:, col + 1] = np.tile(hit.astype(np.float64), cpg)
        col += 2
    return X


def extract_features(latent: Lattice, schedule: CodingSchedule, step: int, group: int,
                     position: tuple[int, int], side: Lattice | None = None,
                     temporal: Lattice | None = None, spec: FeatureSpec = FeatureSpec(),
                     channel: int | None = None, audit: bool = True) -> np.ndarray:
    """Feature vector of one (channel, position) as seen at ``step``."""
    r, c = position
    if schedule.order[group, r, c] != step:
        raise InputError(f"({r}, {c}) of group {group} is not coded at step {step}")
    frame_type = INTER if temporal is not None else INTRA
    layout = feature_layout(schedule.kind, schedule.step_class(step), group, spec, frame_type)
    X = step_features(latent.data, schedule, group, np.array([[r, c]]), layout,
                      None if side is None else side.data,
                      None if temporal is None else temporal.data, audit=audit)
    cpg = latent.channels // schedule.group_count
    k = 0 if channel is None else channel - group * cpg
    if not 0 <= k < cpg:
        raise InputError(f"channel {channel} is not in group {group}")
    return X[k]


@dataclass(frozen=True, eq=False)
class StepPredictor:
    """mean = bias + weights . features; scale constant or affine in squared features."""

    layout: FeatureLayout
    weights: np.ndarray
    bias: float
    scale: float
    var_weights: np.ndarray | None = None
    var_bias: float = 0.0
    scale_floor: float = SCALE_FLOOR

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Means and scales for each row of ``X``.

        Columns are accumulated one at a time in a fixed order so encoder and
        decoder get bit-identical means for identical rows.
        """
        mean = np.full(X.shape[0], self.bias)
        for j, wj in enumerate(self.weights.tolist()):
            if wj != 0.0:
                mean += wj * X[:, j]
        if self.var_weights is None:
            scale = np.full(X.shape[0], max(self.scale, self.scale_floor))
        else:
            var = np.full(X.shape[0], self.var_bias)
            for j, vj in enumerate(self.var_weights.tolist()):
                if vj != 0.0:
                    var += vj * X[:, j] ** 2
            scale = np.sqrt(np.maximum(var, self.scale_floor ** 2))
        return mean, scale


def predict_params(predictor: StepPredictor, features: np.ndarray) -> GaussianParams:
    mean, scale = predictor.predict(np.asarray(features, dtype=np.float64).reshape(1, -1))
    return GaussianParams(float(mean[0]), float(scale[0]))


@dataclass(frozen=True)
class PredictorSet:
    kind: str
    group_count: int
    spec: FeatureSpec
    predictors: dict = field(default_factory=dict)  # (frame_type, step_class, group) -> StepPredictor

    def get(self, frame_type: str, step_class: int, group: int) -> StepPredictor:
        try:
            return self.predictors[(frame_type, step_class, group)]
        except KeyError:
            raise ConfigError(
                f"no {frame_type} predictor for step {step_class}, group {group} ({self.kind})"
            ) from None

    def frame_types(self) -> set[str]:
        return {k[0] for k in self.predictors}

    def check(self, schedule: CodingSchedule, frame_type: str) -> None:
        if schedule.kind != self.kind or schedule.group_count != self.group_count:
            raise ConfigError(
                f"predictors were fitted for {self.kind}, schedule is {schedule.kind}")
        for cls in schedule.step_classes:
            for g in range(schedule.group_count):
                self.get(frame_type, cls, g)


@dataclass(frozen=True)
class Sample:
    """One training frame: latent values plus the contexts seen when coding it."""

    latent: np.ndarray
    side: np.ndarray | None = None
    temporal: np.ndarray | None = None


def _ridge(X: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Ridge fit with an unpenalised intercept; constant columns get weight 0."""
    w = np.zeros(X.shape[1])
    if X.shape[1] == 0:
        return w, float(y.mean())
    keep = np.ptp(X, axis=0) > 0
    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X[:, keep] - xm[keep]
    yc = y - ym
    if Xc.shape[1]:
        gram = Xc.T @ Xc
        if lam == 0.0:
            if np.linalg.matrix_rank(Xc) < Xc.shape[1]:
                raise NumericalError("design matrix is rank deficient; use ridge_lambda > 0")
        else:
            gram = gram + lam * np.eye(gram.shape[0])
        try:
            sol = np.linalg.solve(gram, Xc.T @ yc)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"normal equations are singular: {exc}") from None
        w[keep] = sol
    return w, float(ym - xm @ w)


def fit_predictors(samples: Sequence[Sample], schedule: CodingSchedule | str,
                   ridge_lambda: float = 0.0, spec: FeatureSpec = FeatureSpec(),
                   frame_type: str = INTRA, scale_floor: float = SCALE_FLOOR,
                   scale_model: str = "constant", min_ratio: int = 10,
                   existing: PredictorSet | None = None) -> PredictorSet:
    """Least-squares predictors for every step class and group of a schedule.

    Each sample is coded under a schedule of its own size. ``existing`` lets
    intra and inter predictors accumulate into one set.
    """
    if ridge_lambda < 0:
        raise InputError("ridge_lambda must be >= 0")
    if scale_model not in ("constant", "affine"):
        raise InputError(f"unknown scale model {scale_model!r}")
    if not samples:
        raise InputError("no training samples")
    kind = schedule if isinstance(schedule, str) else schedule.kind
    g_count = _canonical(kind).group_count
    if frame_type == INTER and any(s.temporal is None for s in samples):
        raise InputError("inter predictors need temporal contexts")
    scheds = {}
    out = dict(existing.predictors) if existing is not None else {}
    if existing is not None and (existing.kind != kind or existing.spec != spec):
        raise ConfigError("cannot merge predictors of a different schedule or feature spec")
    probe = _canonical(kind)
    for cls in probe.step_classes:
        for g in range(g_count):
            layout = feature_layout(kind, cls, g, spec, frame_type)
            xs, ys = [], []
            for s in samples:
                lat = np.asarray(s.latent, dtype=np.float64)
                c, h, w = lat.shape
                if c % g_count:
                    raise ConfigError(f"{c} channels do not split into {g_count} groups")
                sched = scheds.get((h, w))
                if sched is None:
                    sched = scheds[(h, w)] = build_schedule(kind, h, w)
                if cls >= len(sched.step_classes):
                    continue
                if sched.shares_predictors:
                    pos = np.argwhere(np.ones((h, w), dtype=bool))
                else:
                    pos = sched.steps[cls].positions[g]
                if len(pos) == 0:
                    continue
                xs.append(step_features(lat, sched, g, pos, layout, s.side, s.temporal))
                cpg = c // g_count
                ys.append(np.concatenate([lat[k, pos[:, 0], pos[:, 1]]
                                          for k in range(g * cpg, (g + 1) * cpg)]))
            if not xs:
                raise InputError(f"no samples cover step {cls} of {kind}")
            X, y = np.concatenate(xs), np.concatenate(ys)
            if X.shape[0] < min_ratio * (X.shape[1] + 1):
                raise InputError(
                    f"step {cls} group {g}: {X.shape[0]} samples for {X.shape[1]} features")
            wts, bias = _ridge(X, y, ridge_lambda)
            resid = y - (bias + X @ wts)
            scale = max(float(np.sqrt(np.mean(resid ** 2))), scale_floor)
            vw, vb = None, 0.0
            if scale_model == "affine":
                vw, vb = _ridge(X ** 2, resid ** 2, max(ridge_lambda, 1e-9))
            out[(frame_type, cls, g)] = StepPredictor(layout, wts, bias, scale, vw, vb, scale_floor)
    return PredictorSet(kind, g_count, spec, out)


def box_down(x: np.ndarray, f: int) -> np.ndarray:
    c, h, w = x.shape
    ph, pw = (-h) % f, (-w) % f
    x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return x.reshape(c, (h + ph) // f, f, (w + pw) // f, f).mean(axis=(2, 4))


def box_up(z: np.ndarray, f: int, h: int, w: int) -> np.ndarray:
    return np.repeat(np.repeat(z, f, axis=1), f, axis=2)[:, :h, :w]


def side_channel(latent: np.ndarray, noise_sigma: float = 0.0, seed: int = 0, factor: int = 4,
                 step: float | None = None):
    """Hyperprior stand-in: 4x box-downsampled latent plus noise, upsampled back.

    With ``step`` the low-resolution values are also quantised; the integer
    symbols are returned alongside the upsampled side channel.
    """
    latent = np.asarray(latent, dtype=np.float64)
    c, h, w = latent.shape
    z = box_down(latent, factor)
    if noise_sigma > 0:
        z = z + noise_sigma * normals(seed, z.shape, stream=4242)
    if step is None:
        return box_up(z, factor, h, w)
    zq = np.copysign(np.floor(np.abs(z / step) + 0.5), z).astype(np.int64)
    return box_up(zq * step, factor, h, w), zq


def side_from_symbols(zq: np.ndarray, step: float, shape: tuple[int, int, int], factor: int = 4):
    c, h, w = shape
    return box_up(np.asarray(zq) * step, factor, h, w)


def _fmt(v: float) -> str:
    return repr(float(v))


def predictors_to_text(pset: PredictorSet) -> str:
    """Flat text: a header, then one line per predictor.

    Line: ``frame_type step group scale bias n w1..wn [var vb v1..vn]``.
    """
    spec = pset.spec
    offs = ";".join(f"{a},{b}" for a, b in spec.offsets) if spec.offsets is not None else "-"
    lines = [
        f"predictors {pset.kind} {pset.group_count}",
        "spec side={:d} temporal={:d} axis={:d} diagonal={:d} cross_group={:d} offsets={}".format(
            spec.side, spec.temporal, spec.axis, spec.diagonal, spec.cross_group, offs),
    ]
    for (ft, cls, g), p in sorted(pset.predictors.items()):
        parts = [ft, str(cls), str(g), _fmt(p.scale), _fmt(p.bias), _fmt(p.scale_floor),
                 str(len(p.weights)), *map(_fmt, p.weights)]
        if p.var_weights is not None:
            parts += ["var", _fmt(p.var_bias), *map(_fmt, p.var_weights)]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def predictors_from_text(text: str) -> PredictorSet:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    try:
        if lines[0][0] != "predictors":
            raise ValueError("missing predictors header")
        kind, g_count = lines[0][1], int(lines[0][2])
        kv = dict(item.split("=", 1) for item in lines[1][1:])
        offs = None if kv["offsets"] == "-" else tuple(
            tuple(int(v) for v in o.split(",")) for o in kv["offsets"].split(";"))
        spec = FeatureSpec(bool(int(kv["side"])), bool(int(kv["temporal"])), bool(int(kv["axis"])),
                           bool(int(kv["diagonal"])), bool(int(kv["cross_group"])), offs)
        preds = {}
        for parts in lines[2:]:
            ft, cls, g = parts[0], int(parts[1]), int(parts[2])
            scale, bias, floor = float(parts[3]), float(parts[4]), float(parts[5])
            n = int(parts[6])
            wts = np.array([float(v) for v in parts[7:7 + n]])
            vw, vb = None, 0.0
            rest = parts[7 + n:]
            if rest:
                if rest[0] != "var":
                    raise ValueError("unexpected trailing fields")
                vb = float(rest[1])
                vw = np.array([float(v) for v in rest[2:]])
            layout = feature_layout(kind, cls, g, spec, ft)
            if layout.size != n or (vw is not None and vw.size != n):
                raise ValueError(f"predictor ({ft}, {cls}, {g}) has {n} weights, layout needs {layout.size}")
            preds[(ft, cls, g)] = StepPredictor(layout, wts, bias, scale, vw, vb, floor)
    except (IndexError, KeyError, ValueError) as exc:
        raise StreamError(f"malformed predictor file: {exc}") from None
    return PredictorSet(kind, g_count, spec, preds)
