"""Command-line front end.

Subcommands: ``voxelize``, ``srts``, ``simulate``, ``track``, ``eval``,
``bench`` and ``replay``. Every run that writes files also writes a JSON run
manifest next to its main output (``<out>.manifest.json``, or
``manifest.json`` inside ``simulate``'s output directory, or
``semtrack-<command>.manifest.json`` in the working directory when there is
no output file; ``--manifest`` overrides all of these). ``replay
<manifest>`` re-executes the recorded command line.

Exit codes: 0 success, 1 input or format error, 2 numerical/internal error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import InputError, NumericalError, SemtrackError
from .evaluation import average_precision, clear_mot, precision_recall
from .geometry import OrientedBox3D, SrtsParams, rotated_iou_3d, rotated_iou_3d_batch, srts, \
    srts_batch
from .kitti_io import (AnnotatedObject, FrameAnnotations, default_calibration,
                       format_calibration, read_calibration, read_labels, read_point_cloud,
                       read_semantic_png, write_labels)
from .simulation import ScenarioConfig, measurements_to_annotations, simulate
from .tracker import FilterConfig, LMBFilter, Measurement
from .voxelizer import GridSpec, MODES, paint_semantics, voxelize


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def write_atomic(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _read_text(path) -> str:
    try:
        return _read_bytes(path).decode("utf-8")
    except UnicodeDecodeError:
        raise InputError(f"{path} is not UTF-8 text") from None


class _Run:
    """Collects manifest fields while a subcommand executes."""

    def __init__(self, command: str, argv: Sequence[str]):
        self.manifest = {
            "subcommand": command,
            "argv": list(argv),
            "tool_version": __version__,
            "config": {},
            "inputs": {},
            "outputs": [],
            "seed": None,
            "timings_s": {},
        }

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.manifest["timings_s"][name] = time.perf_counter() - t0

    def input(self, name: str, path) -> bytes:
        data = _read_bytes(path)
        self.manifest["inputs"][name] = {"path": str(path),
                                         "sha256": hashlib.sha256(data).hexdigest()}
        return data

    def output(self, path, data) -> None:
        write_atomic(path, data)
        self.manifest["outputs"].append(str(path))

    def write(self, path) -> None:
        write_atomic(path, json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def _calibration(run: _Run, path: Optional[str]):
    if path is None:
        run.manifest["config"]["calibration"] = "default"
        return default_calibration()
    return read_calibration(run.input("calib", path))


def _parse_box(text: str) -> OrientedBox3D:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"box must be 7 comma-separated numbers, got {text!r}") from None
    if len(vals) != 7:
        raise InputError(f"box must be x,y,z,l,w,h,yaw, got {len(vals)} values")
    return OrientedBox3D.from_array(vals)


def _srts_params(run: _Run, path: Optional[str]) -> SrtsParams:
    if path is None:
        params = SrtsParams()
    else:
        try:
            params = SrtsParams.from_dict(json.loads(run.input("params", path)))
        except (ValueError, TypeError) as exc:
            raise InputError(f"invalid SRTs parameters: {exc}") from None
    run.manifest["config"]["srts"] = params.to_dict()
    return params


# -------------------------------------------------------------- subcommands

def cmd_voxelize(args, run: _Run) -> int:
    with run.stage("read"):
        cloud = read_point_cloud(run.input("cloud", args.cloud))
        labels = None
        if args.mode == "semantic":
            if args.semantic is None or args.calib is None:
                raise InputError("semantic mode needs --semantic and --calib")
            calib = read_calibration(run.input("calib", args.calib))
            sem = read_semantic_png(run.input("semantic", args.semantic), args.num_classes)
    spec = GridSpec()
    run.manifest["config"].update(mode=args.mode, num_classes=args.num_classes,
                                  unlabeled_as_occupied=args.unlabeled_as_occupied,
                                  grid={"roi_min": spec.roi_min, "roi_max": spec.roi_max,
                                        "dims": spec.dims})
    with run.stage("paint"):
        if args.mode == "semantic":
            labels = paint_semantics(cloud, sem, calib)
    with run.stage("voxelize"):
        grid = voxelize(cloud, labels, spec, args.mode, args.num_classes,
                        args.unlabeled_as_occupied)
    with run.stage("write"):
        run.output(args.out, grid.to_bytes())
    print(f"{int(np.count_nonzero(grid.values))} occupied cells written to {args.out}")
    return 0


def cmd_srts(args, run: _Run) -> int:
    a, b = _parse_box(args.box_a), _parse_box(args.box_b)
    run.manifest["config"]["metric"] = args.metric
    if args.metric == "iou":
        value = rotated_iou_3d(a, b)
    else:
        value = srts(a, b, _srts_params(run, args.params))
    print(f"{value:.6f}")
    return 0


def cmd_simulate(args, run: _Run) -> int:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(run.input("config", args.config))
        except json.JSONDecodeError as exc:
            raise InputError(f"scenario config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InputError("scenario config must be a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = ScenarioConfig.from_dict(data)
    run.manifest["config"]["scenario"] = cfg.to_dict()
    run.manifest["seed"] = cfg.seed
    with run.stage("simulate"):
        scenario = simulate(cfg)
    out = Path(args.out_dir)
    calib = default_calibration()
    with run.stage("write"):
        run.output(out / "truth.txt", write_labels(scenario.truth, "tracking", calib))
        dets = measurements_to_annotations(scenario.measurements)
        run.output(out / "detections.txt", write_labels(dets, "tracking", calib))
        run.output(out / "calib.txt", format_calibration(calib))
        run.output(out / "scenario.json", cfg.to_json() + "\n")
    print(f"{cfg.duration} frames, {sum(len(f) for f in scenario.measurements)} detections "
          f"written to {out}")
    return 0


def _filter_config(run: _Run, path: Optional[str]) -> FilterConfig:
    cfg = FilterConfig() if path is None else FilterConfig.from_json(
        run.input("config", path).decode("utf-8"))
    run.manifest["config"]["filter"] = cfg.to_dict()
    return cfg


def cmd_track(args, run: _Run) -> int:
    cfg = _filter_config(run, args.config)
    calib = _calibration(run, args.calib)
    with run.stage("read"):
        frames = read_labels(run.input("detections", args.detections), "tracking", calib,
                             num_frames=args.num_frames)
    filt = LMBFilter(cfg)
    out = []
    with run.stage("track"):
        for fa in frames:
            ms = [Measurement.from_box(o.box, o.cls, 1.0 if o.score is None else o.score)
                  for o in fa.objects]
            extracted = filt.step(ms, args.dt)
            out.append(FrameAnnotations(fa.frame, [
                AnnotatedObject(t.box, t.cls, filt.track_id(t.label), t.existence)
                for t in extracted
            ]))
    with run.stage("write"):
        run.output(args.out, write_labels(out, "tracking", calib))
    print(f"{len(frames)} frames tracked, {filt.num_reported} tracks reported, written to {args.out}")
    return 0


def cmd_eval(args, run: _Run) -> int:
    calib = _calibration(run, args.calib)
    run.manifest["config"].update(mode=args.mode, matcher=args.matcher,
                                  threshold=args.threshold)
    params = _srts_params(run, args.params)
    with run.stage("read"):
        gt_text = run.input("gt", args.gt)
        hyp_text = run.input("hyp", args.hyp)
        gt = read_labels(gt_text, "tracking", calib)
        hyp = read_labels(hyp_text, "tracking", calib)
        n = max(len(gt), len(hyp))
        gt = read_labels(gt_text, "tracking", calib, num_frames=n)
        hyp = read_labels(hyp_text, "tracking", calib, num_frames=n)
    with run.stage("evaluate"):
        if args.mode == "mot":
            report = clear_mot(gt, hyp, args.matcher, args.threshold, params).to_dict()
        else:
            curve, n_gt = precision_recall(hyp, gt, args.matcher, args.threshold, params)
            report = {"average_precision": average_precision(hyp, gt, args.matcher,
                                                             args.threshold, params),
                      "num_gt": n_gt, "num_detections": int(curve.scores.size)}
            if args.pr_csv:
                run.output(args.pr_csv, curve.to_csv())
    report = {"mode": args.mode, "matcher": args.matcher, "threshold": args.threshold, **report}
    text = _report_text(report)
    if args.out:
        run.output(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
        run.output(Path(str(args.out) + ".txt"), text)
    sys.stdout.write(text)
    return 0


def _report_text(report: dict) -> str:
    width = max(len(k) for k in report)
    lines = []
    for k, v in report.items():
        val = f"{v:.6f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {val:>12}")
    return "\n".join(lines) + "\n"


def random_box_pairs(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Overlapping-ish random pairs: car-to-pedestrian sizes, centers within 3 m."""
    rng = np.random.Generator(np.random.PCG64(seed))
    a = np.column_stack([rng.uniform(-20, 20, (n, 2)), rng.uniform(-1, 1, n),
                         rng.uniform(0.5, 5.0, (n, 3)), rng.uniform(-math.pi, math.pi, n)])
    b = a.copy()
    b[:, 0:3] += rng.normal(0.0, 1.0, (n, 3))
    b[:, 3:6] *= rng.uniform(0.7, 1.3, (n, 3))
    b[:, 6] = rng.uniform(-math.pi, math.pi, n)
    return a, b


def benchmark(n: int, seed: int, mode: str = "batch", chunk: int = 100_000) -> list[dict]:
    """Per-pair latency of SRTs vs rotated IoU over the same random pairs."""
    a, b = random_box_pairs(n, seed)
    rows = []
    for name in ("srts", "iou"):
        t0 = time.perf_counter()
        if mode == "batch":
            kernel = srts_batch if name == "srts" else rotated_iou_3d_batch
            for s in range(0, n, chunk):
                kernel(a[s:s + chunk], b[s:s + chunk])
        else:
            boxes_a = [OrientedBox3D.from_array(r) for r in a]
            boxes_b = [OrientedBox3D.from_array(r) for r in b]
            t0 = time.perf_counter()
            fn = srts if name == "srts" else rotated_iou_3d
            for p, q in zip(boxes_a, boxes_b):
                fn(p, q)
        total = time.perf_counter() - t0
        rows.append({"metric": name, "mode": mode, "pairs": n, "total_s": total,
                     "mean_ns_per_pair": 1e9 * total / max(n, 1)})
    ratio = rows[1]["mean_ns_per_pair"] / max(rows[0]["mean_ns_per_pair"], 1e-12)
    for r in rows:
        r["iou_over_srts"] = ratio
    return rows


def cmd_bench(args, run: _Run) -> int:
    run.manifest["seed"] = args.seed
    run.manifest["config"].update(pairs=args.pairs, mode=args.mode)
    with run.stage("bench"):
        rows = benchmark(args.pairs, args.seed, args.mode)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    run.output(args.out, buf.getvalue())
    print(f"srts {rows[0]['mean_ns_per_pair']:.1f} ns/pair, iou "
          f"{rows[1]['mean_ns_per_pair']:.1f} ns/pair, ratio {rows[0]['iou_over_srts']:.2f}x")
    return 0


def cmd_replay(args, run: _Run) -> int:
    try:
        manifest = json.loads(_read_text(args.manifest))
        argv = manifest["argv"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raise InputError(f"{args.manifest} is not a run manifest") from None
    if argv and argv[0] == "replay":
        raise InputError("refusing to replay a replay manifest")
    return main(argv)


# ------------------------------------------------------------------ parsing

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semtrack", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--manifest", help="manifest path (default: next to the main output)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("voxelize", help="voxelize a velodyne scan")
    v.add_argument("--cloud", required=True)
    v.add_argument("--calib")
    v.add_argument("--semantic")
    v.add_argument("--mode", choices=MODES, default="occupancy")
    v.add_argument("--num-classes", type=int, default=19)
    v.add_argument("--unlabeled-as-occupied", action="store_true")
    v.add_argument("--out", required=True)

    s = sub.add_parser("srts", help="score two boxes")
    s.add_argument("--box-a", required=True)
    s.add_argument("--box-b", required=True)
    s.add_argument("--params")
    s.add_argument("--metric", choices=("srts", "iou"), default="srts")

    m = sub.add_parser("simulate", help="generate a synthetic scenario")
    m.add_argument("--config")
    m.add_argument("--seed", type=int)
    m.add_argument("--out-dir", required=True)

    t = sub.add_parser("track", help="run the LMB tracker over detections")
    t.add_argument("--detections", required=True)
    t.add_argument("--config")
    t.add_argument("--calib")
    t.add_argument("--dt", type=float)
    t.add_argument("--num-frames", type=int)
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="evaluate tracks or detections")
    e.add_argument("--mode", choices=("mot", "ap"), default="mot")
    e.add_argument("--gt", required=True)
    e.add_argument("--hyp", required=True)
    e.add_argument("--matcher", choices=("iou", "srts"), default="srts")
    e.add_argument("--threshold", type=float, default=0.7)
    e.add_argument("--params")
    e.add_argument("--calib")
    e.add_argument("--out")
    e.add_argument("--pr-csv")

    b = sub.add_parser("bench", help="time SRTs against rotated IoU")
    b.add_argument("--pairs", type=int, default=1_000_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--mode", choices=("batch", "scalar"), default="batch")
    b.add_argument("--out", required=True)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    return p


_COMMANDS = {
    "voxelize": cmd_voxelize, "srts": cmd_srts, "simulate": cmd_simulate,
    "track": cmd_track, "eval": cmd_eval, "bench": cmd_bench, "replay": cmd_replay,
}


def _default_manifest(args) -> Path:
    # commands without an output file (srts, eval without --out) drop it in the cwd
    if args.command == "simulate":
        return Path(args.out_dir) / "manifest.json"
    out = getattr(args, "out", None)
    if out:
        return Path(str(out) + ".manifest.json")
    return Path(f"semtrack-{args.command}.manifest.json")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    run = _Run(args.command, argv)
    try:
        code = _COMMANDS[args.command](args, run)
    except NumericalError as exc:
        print(f"semtrack: numerical error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, SemtrackError) as exc:
        print(f"semtrack: error: {exc}", file=sys.stderr)
        return 1
    if args.command != "replay":
        run.write(Path(args.manifest) if args.manifest else _default_manifest(args))
    return code


if __name__ == "__main__":
    sys.exit(main())
