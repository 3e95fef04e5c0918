"""Command-line front end.

Every subcommand accepts ``--seed``, ``--out`` and ``--config``; the config
file is JSON whose keys are the long option names (dashes or underscores),
and flags given on the command line override it.

Exit codes: 0 success, 2 config/input error, 3 stream error, 4 audit failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

from . import bench, codec, context, schedule, sources
from .alignment import AlignConfig
from .errors import ConfigError, InputError, NumericalError, StreamError
from .lattice import Lattice
from .metrics import BD_METHOD, FrameWeightPattern, RdCurve, bd_rate
from .quant import LAMBDAS, QuantTables, default_qp_table, tables_from_text

EXIT_CONFIG, EXIT_STREAM, EXIT_AUDIT = 2, 3, 4


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).replace(",", " ").split()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(",", " ").split()]


def _write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        path.write_text(data)
    else:
        path.write_bytes(data)


def _tables(args) -> QuantTables:
    if getattr(args, "qp_table", None):
        return tables_from_text(Path(args.qp_table).read_text())
    return QuantTables.symmetric(default_qp_table())


def _frames(path) -> list[Lattice]:
    return codec.load_frames(Path(path).read_bytes())


def _seq_config(args, channels: int | None = None) -> codec.SequenceConfig:
    align = None
    if args.align_groups:
        if channels is None:
            raise ConfigError("alignment groups need a known channel count")
        align = AlignConfig(args.align_groups, args.align_offsets, channels, bool(args.align_reorder))
    return codec.SequenceConfig(
        intra_period=args.intra_period, frames_to_code=args.frames_to_code, qp=args.qp,
        schedule=args.schedule, align=align, weights=FrameWeightPattern(tuple(_floats(args.weights))),
        transform=args.transform, side_factor=args.side_factor, block=args.block, search=args.search)


def cmd_gen(args) -> int:
    if args.source == "gauss":
        frames = [sources.gauss_markov_field(sources.GaussMarkovSpec(
            args.height, args.width, args.channels, args.rho_h, args.rho_v, args.rho_c,
            args.sigma, args.seed + t)) for t in range(args.frames)]
        _write(args.out, codec.dump_frames(frames))
        return 0
    if args.source == "zero":
        _write(args.out, codec.dump_frames([Lattice.zeros(args.channels, args.height, args.width)] * args.frames))
        return 0
    spec = sources.two_motion_spec(args.seed, channels=args.channels, size=args.height,
                                   frames=args.frames, rho=args.rho_h, rho_c=args.rho_c)
    if args.innovation:
        spec = dataclasses.replace(spec, innovation=args.innovation)
    scene = sources.moving_sequence(spec)
    _write(args.out, codec.dump_frames(scene.frames))
    _write(str(args.out) + ".flows", codec.dump_frames([Lattice(m.data) for m in scene.motions]))
    _write(str(args.out) + ".occl", codec.dump_frames([Lattice(o[None].astype(float)) for o in scene.occlusions]))
    return 0


def cmd_fit(args) -> int:
    seqs = [_frames(p) for p in args.frames]
    lat_c = codec.latent_shape(seqs[0][0].shape, args.transform)[0]
    cfg = _seq_config(args, lat_c)
    spec = context.FeatureSpec(not args.no_side, not args.no_temporal, not args.no_axis,
                               not args.no_diagonal, not args.no_cross_group)
    pset = codec.fit_codec_predictors(seqs, cfg, _tables(args), qp=args.qp, ridge_lambda=args.ridge,
                                      spec=spec, scale_model=args.scale_model)
    _write(args.out, context.predictors_to_text(pset))
    return 0


def _stats_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "frame_type", "bits", "quality", "weight"])
    for s in stats:
        w.writerow([s.t, s.frame_type, s.rate_bits, repr(s.quality), repr(s.weight)])
    return buf.getvalue()


def cmd_encode(args) -> int:
    frames = _frames(args.frames)
    pset = context.predictors_from_text(Path(args.predictors).read_text())
    lat_c = codec.latent_shape(frames[0].shape, args.transform)[0]
    res = codec.encode_sequence(frames, _seq_config(args, lat_c), pset, _tables(args))
    _write(args.out, res.bitstream)
    if args.csv:
        _write(args.csv, _stats_csv(res.stats))
    return 0


def cmd_decode(args) -> int:
    pset = context.predictors_from_text(Path(args.predictors).read_text())
    res = codec.decode_sequence(Path(args.bitstream).read_bytes(), pset, _tables(args), start=args.start)
    _write(args.out, codec.dump_frames(res.frames))
    return 0


def cmd_bench(args) -> int:
    spec = sources.GaussMarkovSpec(args.height, args.width, args.channels, args.rho_h, args.rho_v,
                                   args.rho_c, args.sigma, args.seed)
    seeds = _ints(args.seeds) if args.seeds else [args.seed + k for k in range(3)]
    res = bench.benchmark_schedules(spec, args.schedules.replace(",", " ").split(), _ints(args.qps),
                                    seeds=seeds, train_seeds=_ints(args.train_seeds),
                                    tables=_tables(args), fit_qp=args.fit_qp,
                                    transform=args.transform)
    out = Path(args.out)
    _write(out / "curves.csv", bench.curves_csv(res))
    _write(out / "bdrate.csv", bench.bd_matrix_csv(res.schedules, res.bd))
    meta = {"config_hash": res.config_hash, "bd_method": BD_METHOD, "config": res.config}
    _write(out / "meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return 0


def _read_curves(path) -> dict[str, RdCurve]:
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    if not rows or not {"schedule", "bpp", "quality"} <= set(rows[0]):
        raise InputError('curve CSV needs columns "schedule,qp,bpp,quality"')
    grouped: dict[str, list] = {}
    for r in rows:
        grouped.setdefault(r["schedule"], []).append((float(r["bpp"]), float(r["quality"])))
    return {k: RdCurve.from_points(v) for k, v in grouped.items()}


def cmd_bdrate(args) -> int:
    curves = _read_curves(args.curves)
    labels = list(curves)
    anchors = [args.anchor] if args.anchor else labels
    for a in anchors:
        if a not in curves:
            raise InputError(f"anchor {a!r} not found in {args.curves}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["anchor", "test", "bdrate_percent"])
    for a in anchors:
        for t in labels:
            value = 0.0 if a == t else bd_rate(curves[a], curves[t])
            w.writerow([a, t, f"{value:.6f}"])
    _write(args.out, buf.getvalue())
    return 0


def cmd_demo_hierarchy(args) -> int:
    gm = lambda s: sources.gauss_markov_field(sources.GaussMarkovSpec(
        args.height, args.width, 1, args.rho_h, args.rho_v, 0.0, args.sigma, s))
    frames = [gm(args.seed + t) for t in range(args.frames)]
    train = [gm(args.seed + 10_000 + t) for t in range(4)]
    lam = args.lam if args.lam is not None else LAMBDAS[args.lambda_index]
    cfg = codec.SequenceConfig(schedule=args.schedule, transform="haar")
    res = bench.hierarchical_allocation_demo(frames, FrameWeightPattern(tuple(_floats(args.weights))),
                                             lam, cfg, tables=_tables(args), train_frames=train)
    _write(args.out, bench.allocation_csv(res))
    return 0


def cmd_audit_schedule(args) -> int:
    if args.file:
        sched = schedule.schedule_from_text(Path(args.file).read_text())
    else:
        sched = schedule.build_schedule(args.schedule, args.height, args.width)
    problems = schedule.audit_partition(sched)
    prof = schedule.neighbor_profile(sched)
    report = {
        "schedule": sched.kind,
        "groups": sched.group_count,
        "height": sched.height,
        "width": sched.width,
        "steps": sched.step_count,
        "neighbors_per_step": list(prof.per_step),
        "neighbors_uniform": bool(prof.uniform),
        "neighbors_average": float(prof.average),
        "cross_channel_per_step": [list(v) for v in schedule.cross_channel_profile(sched)],
        "violations": problems,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_AUDIT if problems else 0


_REQUIRED = {
    "fit": ("frames",),
    "encode": ("frames", "predictors"),
    "decode": ("bitstream", "predictors"),
    "bdrate": ("curves",),
}


_COMMANDS = {
    "gen": cmd_gen,
    "fit": cmd_fit,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "bench": cmd_bench,
    "bdrate": cmd_bdrate,
    "demo-hierarchy": cmd_demo_hierarchy,
    "audit-schedule": cmd_audit_schedule,
}


def _codec_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--qp", type=int, default=32)
    p.add_argument("--schedule", default="quadtree", choices=schedule.KINDS)
    p.add_argument("--transform", default="identity", choices=codec.TRANSFORMS)
    p.add_argument("--intra-period", type=int, default=32)
    p.add_argument("--frames-to-code", type=int, default=96)
    p.add_argument("--weights", default="0.5,1.2,0.5,0.9")
    p.add_argument("--side-factor", type=int, default=4)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--search", type=int, default=4)
    p.add_argument("--align-groups", type=int, default=0, help="0 keeps one group per channel")
    p.add_argument("--align-offsets", type=int, default=1)
    p.add_argument("--align-reorder", type=int, default=0)
    p.add_argument("--qp-table", help="text file with [encoder]/[decoder] qp tables")


def _source_options(p: argparse.ArgumentParser, channels: int = 4, size: int = 64) -> None:
    p.add_argument("--height", type=int, default=size)
    p.add_argument("--width", type=int, default=size)
    p.add_argument("--channels", type=int, default=channels)
    p.add_argument("--rho-h", type=float, default=0.9)
    p.add_argument("--rho-v", type=float, default=0.9)
    p.add_argument("--rho-c", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dclab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out")
    common.add_argument("--config", help="JSON file of option defaults")

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic frame sequence")
    p.add_argument("--source", choices=("gauss", "scene", "zero"), default="gauss")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--innovation", type=float, default=0.0)
    _source_options(p)

    p = sub.add_parser("fit", parents=[common], help="fit context predictors on frame files")
    p.add_argument("--frames", nargs="+")
    p.add_argument("--ridge", type=float, default=1e-6)
    p.add_argument("--scale-model", choices=("constant", "affine"), default="constant")
    for flag in ("side", "temporal", "axis", "diagonal", "cross-group"):
        p.add_argument(f"--no-{flag}", action="store_true")
    _codec_options(p)

    p = sub.add_parser("encode", parents=[common], help="encode frames into a DCLB container")
    p.add_argument("--frames")
    p.add_argument("--predictors")
    p.add_argument("--csv", help="per-frame stats: t,frame_type,bits,quality,weight")
    _codec_options(p)

    p = sub.add_parser("decode", parents=[common], help="decode a DCLB container")
    p.add_argument("--bitstream")
    p.add_argument("--predictors")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--qp-table")

    p = sub.add_parser("bench", parents=[common], help="RD curves and BD-rates per schedule")
    p.add_argument("--schedules", default="context_free,checkerboard,dual_spatial,quadtree")
    p.add_argument("--qps", default="0,9,18,27,36,45,54,63")
    p.add_argument("--seeds", default="")
    p.add_argument("--train-seeds", default="1001,1002")
    p.add_argument("--fit-qp", type=int)
    p.add_argument("--transform", default="identity", choices=codec.TRANSFORMS)
    p.add_argument("--qp-table")
    _source_options(p, size=128)

    p = sub.add_parser("bdrate", parents=[common], help="BD-rate between curves in a CSV")
    p.add_argument("--curves")
    p.add_argument("--anchor")

    p = sub.add_parser("demo-hierarchy", parents=[common], help="toy hierarchical rate allocation")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--weights", default="0.5,1.2,0.5,0.9")
    p.add_argument("--lam", type=float)
    p.add_argument("--lambda-index", type=int, default=2, choices=range(len(LAMBDAS)))
    p.add_argument("--schedule", default="quadtree", choices=schedule.KINDS)
    p.add_argument("--qp-table")
    _source_options(p, channels=1, size=128)

    p = sub.add_parser("audit-schedule", parents=[common], help="partition and context audit")
    p.add_argument("--schedule", default="quadtree", choices=schedule.KINDS)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--file", help="audit an explicit schedule text file instead")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        conf = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(conf, dict):
        raise ConfigError("config file must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in conf.items():
        dest = key.replace("-", "_")
        if dest not in known or dest == "config":
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.command != "audit-schedule" and not args.out:
            raise ConfigError("--out is required")
        for name in _REQUIRED.get(args.command, ()):
            if not getattr(args, name):
                raise ConfigError(f"--{name} is required")
        return _COMMANDS[args.command](args)
    except (ConfigError, InputError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StreamError as exc:
        print(f"stream error: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
