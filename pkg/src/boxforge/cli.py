"""``boxforge`` command line: JSON Lines in, JSON Lines out.

Exit codes: 0 success, 1 invalid input or arguments, 2 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import jsonschema

from . import __version__
from .config import PipelineConfig, load_config
from .fusion import (
    ModelRun,
    calibrate_detection,
    ensemble,
    merge_flip,
    merge_scales,
    scale_aware_decay,
)
from .evaluation import evaluate
from .geometry import BBox, ImageShape
from .kernels import BACKEND
from .pyramid import AnchorSpec, anchor_array, assign_level, scale_report
from .records import (
    RecordError,
    detections_from_coco,
    detections_to_coco,
    dumps,
    ground_truth_from_coco,
    ground_truth_to_coco,
    gt_to_dict,
    iter_json_lines,
    read_detections,
    read_ground_truth,
    read_image_records,
    write_detections,
    write_lines,
)
from .sampling import (
    EXTENDED_LONG_CAP,
    EXTENDED_SCALES,
    LrScheduleConfig,
    MultiScaleCropConfig,
    SamplePlanConfig,
    build_sample_plan,
    lr_at,
    plan_crop,
)
from .suppression import SuppressionConfig, box_voting, nms, score_filter, soft_nms


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads() -> int:
    raw = os.environ.get("BOXFORGE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"BOXFORGE_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _map(fn, items):
    items = list(items)
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _ordered(dets):
    """image_id ascending, score descending, then stable."""
    idx = sorted(range(len(dets)), key=lambda i: (dets[i].image_id, -dets[i].score, i))
    return [dets[i] for i in idx]


def _group(dets):
    groups = {}
    for d in dets:
        groups.setdefault(d.image_id, []).append(d)
    return [groups[k] for k in sorted(groups)]


class _IO:
    def __init__(self, args, stdin, stdout):
        self.args = args
        self.stdin = stdin
        self.stdout = stdout

    def open_in(self):
        path = getattr(self.args, "input", None)
        if path is None or path == "-":
            return self.stdin, "<stdin>", False
        return open(path, encoding="utf-8"), path, True

    def read(self, reader):
        fh, name, close = self.open_in()
        try:
            return reader(fh, name)
        finally:
            if close:
                fh.close()

    def write(self, fn):
        path = getattr(self.args, "output", None)
        if path is None or path == "-":
            fn(self.stdout)
            return
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fn(fh)


def _read_path(path, reader):
    with open(path, encoding="utf-8") as fh:
        return reader(fh, path)


def _config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return PipelineConfig()


# subcommand handlers: (args, cfg, io) -> None


def cmd_filter(args, cfg, io):
    floor = cfg.suppression.score_floor if args.floor is None else args.floor
    if not (0.0 <= floor < 1.0):
        raise ValueError(f"--floor must lie in [0, 1), got {floor}")
    dets = io.read(read_detections)
    io.write(lambda fh: write_detections(fh, _ordered(score_filter(dets, floor))))


def cmd_nms(args, cfg, io):
    dets = io.read(read_detections)
    kept = _map(lambda g: nms(g, cfg.suppression), _group(dets))
    io.write(lambda fh: write_detections(fh, _ordered([d for g in kept for d in g])))


def cmd_soft_nms(args, cfg, io):
    sup = cfg.suppression
    if args.mode is not None or args.sigma is not None:
        sup = replace(
            sup,
            soft_mode=args.mode or sup.soft_mode,
            soft_sigma=sup.soft_sigma if args.sigma is None else args.sigma,
        )
    dets = io.read(read_detections)
    kept = _map(lambda g: soft_nms(g, sup), _group(dets))
    io.write(lambda fh: write_detections(fh, _ordered([d for g in kept for d in g])))


def cmd_vote(args, cfg, io):
    kept = io.read(read_detections)
    pool = _read_path(args.pool, read_detections)
    pools = {}
    for p in pool:
        pools.setdefault(p.image_id, []).append(p)
    voted = _map(lambda g: box_voting(g, pools.get(g[0].image_id, []), cfg.suppression), _group(kept))
    io.write(lambda fh: write_detections(fh, _ordered([d for g in voted for d in g])))


def cmd_calibrate(args, cfg, io):
    cal = cfg.calibration
    if args.temperature is not None:
        cal = replace(cal, temperature=args.temperature)
    dets = io.read(read_detections)
    io.write(lambda fh: write_detections(fh, _ordered([calibrate_detection(d, cal) for d in dets])))


def cmd_decay(args, cfg, io):
    dets = io.read(read_detections)
    io.write(lambda fh: write_detections(fh, _ordered(scale_aware_decay(dets, cfg.scale_aware))))


def cmd_fuse_scales(args, cfg, io):
    if not args.passes:
        raise UsageError("fuse-scales needs at least one --pass TAG SX SY PATH")
    passes = []
    for tag, sx, sy, path in args.passes:
        try:
            fx, fy = float(sx), float(sy)
        except ValueError:
            raise UsageError(f"--pass {tag}: SX and SY must be numbers") from None
        passes.append((tag, fx, fy, _read_path(path, read_detections)))
    merged = merge_scales(passes, cfg.scale_aware)
    io.write(lambda fh: write_detections(fh, _ordered(merged)))


def cmd_fuse_flip(args, cfg, io):
    normal = io.read(read_detections)
    flipped = _read_path(args.flipped, read_detections)
    merged = merge_flip(normal, flipped, ImageShape(args.width, args.height))
    io.write(lambda fh: write_detections(fh, _ordered(merged)))


def cmd_ensemble(args, cfg, io):
    if not args.runs:
        raise UsageError("ensemble needs at least one --run MODEL_ID PATH")
    aps = {}
    if args.aps:
        with open(args.aps, encoding="utf-8") as fh:
            aps = json.load(fh)
    if len(args.runs) > 1 and not aps:
        raise UsageError("ensemble of several runs needs --aps")
    runs = []
    for model_id, path in args.runs:
        dets = _read_path(path, read_detections)
        fixed = []
        for d in dets:
            if d.model_id is None:
                d = replace(d, model_id=model_id)
            elif d.model_id != model_id:
                raise ValueError(f"{path}: detection model_id {d.model_id!r} != --run {model_id!r}")
            fixed.append(d)
        if len(args.runs) > 1 and model_id not in aps:
            raise ValueError(f"--aps has no entry for model {model_id!r}")
        ap = aps.get(model_id, {})
        runs.append(ModelRun(model_id, fixed, {k: float(v) for k, v in ap.items()}))
    out = ensemble(runs, cfg.ensemble, cfg.suppression)
    io.write(lambda fh: write_detections(fh, _ordered(out)))


def cmd_eval(args, cfg, io):
    ev = cfg.eval
    if args.level is not None:
        ev = replace(ev, level=args.level)
    if args.mode is not None:
        ev = replace(ev, ap_mode="exact" if args.mode == "exact" else "interp101")
    dets = io.read(read_detections)
    gts = _read_path(args.gt, read_ground_truth)
    report = evaluate(dets, gts, ev)
    io.write(lambda fh: fh.write(report.to_json() + "\n"))
    if args.table:
        with open(args.table, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.table())


def _box_of(obj):
    return BBox(*(float(obj[k]) for k in ("x1", "y1", "x2", "y2")))


def _read_objects(fh, name):
    return [(lineno, obj) for lineno, obj in iter_json_lines(fh, name)]


def cmd_analyze_scales(args, cfg, io):
    items = []
    for lineno, obj in io.read(_read_objects):
        try:
            if not isinstance(obj, dict):
                raise ValueError("record must be a JSON object")
            w = obj.get("width", args.width)
            h = obj.get("height", args.height)
            if w is None or h is None:
                raise ValueError("image size missing: give width/height fields or --width/--height")
            items.append((_box_of(obj), ImageShape(int(w), int(h))))
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordError(str(exc), lineno) from None
    edges = None
    if args.edges:
        edges = [float(v) for v in args.edges.split(",")]
    elif args.bins:
        edges = [i / args.bins for i in range(args.bins + 1)]
    kw = {} if args.threshold is None else {"threshold": args.threshold}
    stats = scale_report(items, edges, **kw)
    doc = {
        "count": int(stats.scales.size),
        "threshold": stats.threshold,
        "small_fraction": stats.small_fraction,
        "bins": [{"bin_low": lo, "bin_high": hi, "fraction": f} for lo, hi, f in stats.rows()],
    }
    io.write(lambda fh: fh.write(dumps(doc) + "\n"))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(stats.to_csv())


def cmd_assign_level(args, cfg, io):
    out = []
    for lineno, obj in io.read(_read_objects):
        try:
            if not isinstance(obj, dict):
                raise ValueError("record must be a JSON object")
            obj = dict(obj)
            obj["level"] = assign_level(_box_of(obj), cfg.level_assign)
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordError(str(exc), lineno) from None
        out.append(obj)
    io.write(lambda fh: write_lines(fh, out))


def cmd_gen_anchors(args, cfg, io):
    spec = AnchorSpec() if args.ratios is None else AnchorSpec(ratios=args.ratios)
    arr = anchor_array(spec, args.level, args.feature_width, args.feature_height)
    level = args.level if args.level.upper().startswith("P") else f"P{args.level}"
    rows = (
        {"level": level.upper(), "x1": r[0], "y1": r[1], "x2": r[2], "y2": r[3]} for r in arr.tolist()
    )
    io.write(lambda fh: write_lines(fh, rows))


def cmd_crop_plan(args, cfg, io):
    scales = args.scales or (EXTENDED_SCALES if args.extended else MultiScaleCropConfig.scales)
    cap = args.long_cap or (EXTENDED_LONG_CAP if args.extended else MultiScaleCropConfig.long_cap)
    ccfg = MultiScaleCropConfig(
        scales=tuple(scales),
        long_cap=cap,
        crop_height=args.crop_height,
        crop_width=args.crop_width,
        jitter=args.jitter,
        seed=args.seed,
    )
    records = io.read(read_image_records)
    plans = _map(lambda r: plan_crop(r, ccfg), records)
    io.write(lambda fh: write_lines(fh, (p.to_json() for p in plans)))


def _parse_ratio(text):
    out = {}
    for part in text.split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise UsageError(f"--ratio expects bucket=value pairs, got {part!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError:
            raise UsageError(f"--ratio value for {key!r} is not a number") from None
    return out


def cmd_sample_plan(args, cfg, io):
    kw = {"images_per_epoch": args.images_per_epoch, "seed": args.seed}
    if args.ratio:
        kw["ratio"] = _parse_ratio(args.ratio)
    scfg = SamplePlanConfig(**kw)
    records = io.read(read_image_records)
    plan = build_sample_plan(records, scfg)
    io.write(lambda fh: write_lines(fh, ({"image_id": i} for i in plan)))


def cmd_lr_schedule(args, cfg, io):
    lcfg = LrScheduleConfig(
        base_lr=args.base_lr,
        base_batch=args.base_batch,
        batch=args.batch,
        warmup_iters=args.warmup,
        total_iters=args.total,
        min_lr=args.min_lr,
    )
    iters = list(range(0, lcfg.total_iters + 1, args.every))
    if iters[-1] != lcfg.total_iters:
        iters.append(lcfg.total_iters)
    io.write(lambda fh: write_lines(fh, ({"iteration": i, "lr": lr_at(i, lcfg)} for i in iters)))


def cmd_coco(args, cfg, io):
    if args.direction == "export":
        if args.kind == "det":
            doc = detections_to_coco(io.read(read_detections))
        else:
            doc = ground_truth_to_coco(io.read(read_ground_truth))
        io.write(lambda fh: fh.write(dumps(doc) + "\n"))
        return
    fh, name, close = io.open_in()
    try:
        doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise RecordError(f"invalid JSON ({exc.msg})", exc.lineno, name) from None
    finally:
        if close:
            fh.close()
    try:
        if args.kind == "det":
            out = detections_from_coco(doc)
            io.write(lambda f: write_detections(f, out))
        else:
            gts = ground_truth_from_coco(doc)
            io.write(lambda f: write_lines(f, (gt_to_dict(g) for g in gts)))
    except (KeyError, TypeError) as exc:
        raise RecordError(f"malformed COCO document: {exc}", source=name) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="boxforge", description="Detection post-processing and evaluation.")
    p.add_argument("--version", action="version", version=f"boxforge {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_, io_=True):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", metavar="PATH", help="pipeline config JSON")
        if io_:
            sp.add_argument("--in", dest="input", metavar="PATH", help="input file (default stdin)")
        sp.add_argument("--out", dest="output", metavar="PATH", help="output file (default stdout)")
        return sp

    sp = add("filter", cmd_filter, "drop detections scoring below a floor")
    sp.add_argument("--floor", type=float)

    add("nms", cmd_nms, "greedy per-class NMS, per image")

    sp = add("soft-nms", cmd_soft_nms, "per-class Soft-NMS, per image")
    sp.add_argument("--mode", choices=["linear", "gaussian"])
    sp.add_argument("--sigma", type=float)

    sp = add("vote", cmd_vote, "bounding-box voting of kept detections against a pool")
    sp.add_argument("--pool", required=True, metavar="PATH", help="pre-NMS candidate detections")

    sp = add("calibrate", cmd_calibrate, "temperature-calibrate scores")
    sp.add_argument("--temperature", type=float)

    add("decay", cmd_decay, "scale-aware score decay of tagged test passes")

    sp = add("fuse-scales", cmd_fuse_scales, "map test passes to the original frame and decay", io_=False)
    sp.add_argument(
        "--pass", dest="passes", nargs=4, action="append", metavar=("TAG", "SX", "SY", "PATH"),
        help="one test pass: tag, resize factors and detection file",
    )

    sp = add("fuse-flip", cmd_fuse_flip, "un-flip horizontally flipped detections and merge")
    sp.add_argument("--flipped", required=True, metavar="PATH")
    sp.add_argument("--width", required=True, type=int)
    sp.add_argument("--height", required=True, type=int)

    sp = add("ensemble", cmd_ensemble, "rank-weighted ensemble followed by NMS and voting", io_=False)
    sp.add_argument("--run", dest="runs", nargs=2, action="append", metavar=("MODEL_ID", "PATH"))
    sp.add_argument("--aps", metavar="PATH", help="JSON {model_id: {class: validation AP}}")

    sp = add("eval", cmd_eval, "AP per class and ALL_NS")
    sp.add_argument("--gt", required=True, metavar="PATH")
    sp.add_argument("--level", type=int, choices=[1, 2])
    sp.add_argument("--mode", choices=["interp101", "exact"])
    sp.add_argument("--table", metavar="PATH", help="also write a fixed-width text table")

    sp = add("analyze-scales", cmd_analyze_scales, "relative-scale histogram of boxes")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--edges", help="comma-separated bin edges")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--csv", metavar="PATH", help="also write bin_low,bin_high,fraction CSV")

    add("assign-level", cmd_assign_level, "pyramid level of each box")

    sp = add("gen-anchors", cmd_gen_anchors, "anchors of one pyramid level", io_=False)
    sp.add_argument("--level", required=True, help="P2..P6")
    sp.add_argument("--feature-width", required=True, type=int)
    sp.add_argument("--feature-height", required=True, type=int)
    sp.add_argument("--ratios", type=float, nargs="+")

    sp = add("crop-plan", cmd_crop_plan, "multi-scale resize + crop plans")
    sp.add_argument("--seed", required=True, type=int)
    sp.add_argument("--scales", type=int, nargs="+")
    sp.add_argument("--extended", action="store_true", help="use the extended scale set and 3840 cap")
    sp.add_argument("--long-cap", type=float)
    sp.add_argument("--crop-height", type=int, default=640)
    sp.add_argument("--crop-width", type=int, default=960)
    sp.add_argument("--jitter", type=float, default=0.25)

    sp = add("sample-plan", cmd_sample_plan, "class-aware epoch sample plan")
    sp.add_argument("--seed", required=True, type=int)
    sp.add_argument("--images-per-epoch", type=int, default=120_000)
    sp.add_argument("--ratio", help="e.g. cyclist=1,pedestrian=1,vehicle=1,background=0.3")

    sp = add("lr-schedule", cmd_lr_schedule, "warmup + cosine learning-rate table", io_=False)
    sp.add_argument("--base-lr", type=float, default=0.02)
    sp.add_argument("--base-batch", type=int, default=16)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--warmup", type=int, default=500)
    sp.add_argument("--total", type=int, default=10_000)
    sp.add_argument("--min-lr", type=float, default=0.0)
    sp.add_argument("--every", type=int, default=1)

    sp = add("coco", cmd_coco, "convert between JSON Lines and COCO-style JSON")
    sp.add_argument("direction", choices=["import", "export"])
    sp.add_argument("--kind", choices=["det", "gt"], default="det")
    return p


def main(argv=None, stdin=None, stdout=None) -> int:
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "every", 1) < 1:
            raise UsageError("--every must be positive")
        cfg = _config(args)
        args.func(args, cfg, _IO(args, stdin, stdout))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RecordError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except jsonschema.ValidationError as exc:
        print(f"error: invalid config: {exc.message}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
