"""``fusiondet`` command line: project, synth-dataset, train, eval, bench.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .adverse_synth import CorruptionSpec, Sensor, corrupt_frame, fail_sensor
from .dataset_io import store
from .dataset_io.depth_png import depth_png_bytes
from .dataset_io.kitti import format_calibration, read_calibration, read_point_cloud, write_point_cloud
from .dataset_io.split import SplitSpec, apply_split
from .dataset_io.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from .detect_eval.bench import bench_inference
from .errors import DataError, FusionError, IncompatibleCombination
from .fusion_net import ArchitectureConfig, Preprocessor
from .lidar_repr import RangeGeometry, build_lidar_image_geom, build_sparse_depth, densify
from .model import Detector
from .tensor_nn import checkpoint
from .training import TrainConfig, dataset_mean, evaluate_detector, prepare, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
REPRS = ("range", "sparse", "dense")
ARCHS = ("none", "early", "middle", "late")
ENCODERS = ("vgg16m-mu", "vgg16-mu", "vgg16m", "vgg16")
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
ARCH_KEYS = {"encoder", "fusion", "representation", "input_size"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pair(text: str):
    try:
        a, b = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two integers 'A,B', got {text!r}") from None
    return a, b


def _floats(n):
    def parse(text):
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            vals = ()
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals
    return parse


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------- project

def cmd_project(args) -> int:
    cloud = read_point_cloud(Path(args.cloud).read_bytes()).points
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.cloud).stem
    if args.repr == "range":
        img = build_lidar_image_geom(cloud, RangeGeometry.velodyne64()).grid
    else:
        intr, ext = read_calibration(Path(args.calib).read_text(), args.camera, *(args.size or (None, None)))
        img = build_sparse_depth(cloud, intr, ext)
        if args.repr == "dense":
            img = densify(img, args.window)
    path = out / f"{stem}_{args.repr}.png"
    path.write_bytes(depth_png_bytes(img))
    print(path)
    return EXIT_OK


# ---------------------------------------------------------- synth-dataset

def _corruption_spec(args) -> CorruptionSpec:
    return CorruptionSpec(seed=args.seed, weights=args.weights, patch_count_range=args.patch_count,
                          patch_area_range=args.patch_area, failure_split=args.failure_split)


def _source_frames(args, scene: SyntheticSceneSpec):
    """Yield ``(frame, calib text, cloud bytes)``; synthetic unless ``--in`` names a dataset."""
    if args.source:
        meta = store.read_metadata(args.source)
        if meta.get("representation") != args.repr:
            raise UsageError(f"--in holds {meta.get('representation')!r} frames but --repr is {args.repr!r}")
        for rec in store.read_manifest(args.source)[:args.count]:
            yield store.read_frame(args.source, rec["frame_id"], scene.classes), None, None
        return
    for i in range(args.count):
        sf = generate_synthetic_scene(scene, i)
        yield sf.to_sensor_frame(args.repr, args.window), format_calibration(sf.intr, sf.ext), write_point_cloud(sf.cloud)


def cmd_synth_dataset(args) -> int:
    scene = SyntheticSceneSpec(seed=args.scene_seed, color_jitter=args.color_jitter)
    spec = _corruption_spec(args)
    out = Path(args.out)
    if args.source and Path(args.source).resolve() == out.resolve():
        raise UsageError("--in and --out must differ")
    records = []
    for i, (frame, calib, cloud) in enumerate(_source_frames(args, scene)):
        if args.fail:
            frame = fail_sensor(frame, Sensor(args.fail))
            record = {"category": f"{args.fail}_failed", "patches": []}
        elif args.clean:
            record = {"category": "clean", "patches": []}
        else:
            frame = corrupt_frame(frame, spec, i)
            record = frame.tag.to_dict()
        store.write_frame(out, frame, scene.classes, calib, cloud)
        records.append({"index": i, "frame_id": frame.frame_id, "seed": spec.seed, **record})
    if not records:
        raise DataError("no frames to write")
    meta = {
        "count": len(records),
        "representation": args.repr,
        "source": str(args.source) if args.source else None,
        "color_jitter": args.color_jitter,
        "window": args.window,
        "scene_seed": args.scene_seed,
        "classes": list(scene.classes),
        "corruption": None if (args.clean or args.fail) else {**asdict(spec), "weights": list(spec.weights),
                                                              "patch_count_range": list(spec.patch_count_range),
                                                              "patch_area_range": list(spec.patch_area_range)},
        "failed_sensor": args.fail,
    }
    store.write_metadata(out, meta, records)
    print(out / store.MANIFEST)
    return EXIT_OK


# ------------------------------------------------------------------ train

def _load_config(args, default_repr: str | None = None) -> tuple[ArchitectureConfig, TrainConfig, int]:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config {args.config}: {e.msg}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
    unknown = set(raw) - ARCH_KEYS - TRAIN_KEYS - {"repeats"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    arch_kw = {k: raw[k] for k in ARCH_KEYS if k in raw}
    if default_repr is not None:
        arch_kw.setdefault("representation", default_repr)
    train_kw = {k: raw[k] for k in TRAIN_KEYS if k in raw}
    for flag, key in (("encoder", "encoder"), ("arch", "fusion"), ("repr", "representation")):
        if getattr(args, flag, None) is not None:
            arch_kw[key] = getattr(args, flag)
    for key in ("iters", "seed", "lr_step", "batch_size", "momentum"):
        if getattr(args, key, None) is not None:
            train_kw[key] = getattr(args, key)
    arch = ArchitectureConfig(**arch_kw)
    arch.input_size = tuple(arch.input_size)
    arch.validate()
    tcfg = TrainConfig(**train_kw)
    tcfg.validate()
    repeats = args.repeats if getattr(args, "repeats", None) is not None else int(raw.get("repeats", 1))
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")
    # builds the graph once so incompatible combinations fail before any work
    Detector.from_config(arch)
    return arch, tcfg, repeats


def _check_repr(arch: ArchitectureConfig, meta: dict):
    if meta.get("representation") != arch.representation:
        raise DataError(f"dataset holds {meta.get('representation')!r} depth but the model expects "
                        f"{arch.representation!r}")


def derived_seeds(seed: int, repeats: int) -> list[int]:
    if repeats == 1:
        return [seed]
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(repeats)]


def cmd_train(args) -> int:
    meta = store.read_metadata(args.data)
    arch, tcfg, repeats = _load_config(args, meta.get("representation"))
    _check_repr(arch, meta)
    frames = store.read_dataset(args.data, tuple(meta["classes"]))
    val_frames = []
    if args.split:
        _, frames, val_frames = apply_split(frames, SplitSpec(*args.split))
    if not frames:
        raise DataError("no training frames")
    pre = Preprocessor(target=arch.input_size, rgb_mean=dataset_mean(frames))
    data = prepare(frames, pre)
    val = prepare(val_frames, pre) if val_frames else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    runs = []
    for r, seed in enumerate(derived_seeds(tcfg.seed, repeats)):
        cfg = TrainConfig(**{**asdict(tcfg), "seed": seed, "early_stop_ratio": args.early_stop})
        det = Detector.from_config(arch, tuple(meta["classes"]))
        det.init(seed)

        def log(rec, r=r):
            with open(log_path, "a") as fh:
                fh.write(json.dumps({"repeat": r, **rec}, sort_keys=True) + "\n")

        history = train(det, data, cfg, log, val)
        report = evaluate_detector(det, data)
        run = {"repeat": r, "seed": seed, "final_loss": history[-1]["loss"] if history else None,
               "train_map": report.map, "train_ap": report.ap}
        if val is not None:
            run["val_map"] = evaluate_detector(det, val).map
        runs.append(run)
        ckpt_meta = {"architecture": json.loads(arch.to_json()), "classes": list(det.classes),
                     "preprocessor": asdict(pre), "train": cfg.to_dict(), "repeat": r}
        name = "model.ckpt" if repeats == 1 else f"model_r{r}.ckpt"
        checkpoint.save(out / name, det.params, ckpt_meta)
    summary = {"runs": runs, "repeats": repeats,
               "mean_train_map": float(np.mean([x["train_map"] for x in runs]))}
    if val is not None:
        summary["mean_val_map"] = float(np.mean([x["val_map"] for x in runs]))
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: v for k, v in summary.items() if k != "runs"}, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------ eval, bench

def load_detector(path):
    try:
        params, meta = checkpoint.load(path)
        arch = ArchitectureConfig(**{**meta["architecture"], "input_size": tuple(meta["architecture"]["input_size"])})
        p = meta["preprocessor"]
    except (KeyError, TypeError) as e:
        raise DataError(f"checkpoint {path} lacks metadata field {e}") from None
    det = Detector.from_config(arch, tuple(meta["classes"]))
    if set(params) != set(det.param_shapes()):
        raise DataError(f"checkpoint {path} does not match its architecture")
    det.params = params
    pre = Preprocessor(tuple(p["target"]), tuple(p["rgb_mean"]), p["depth_scale"], p["rgb_scale"], p["depth_gain"])
    return det, arch, pre


def cmd_eval(args) -> int:
    det, arch, pre = load_detector(args.checkpoint)
    meta = store.read_metadata(args.data)
    _check_repr(arch, meta)
    frames = store.read_dataset(args.data, det.classes)
    if args.split:
        frames, _, _ = apply_split(frames, SplitSpec(*args.split))
    if not frames:
        raise DataError("no evaluation frames")
    report = evaluate_detector(det, prepare(frames, pre), args.iou)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(report.csv())
    _write_json(out / "eval.json", {**report.to_dict(), "iou_threshold": args.iou, "frames": len(frames)})
    print(f"mAP {report.map:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.checkpoint:
        det, arch, pre = load_detector(args.checkpoint)
    else:
        arch, _, _ = _load_config(args)
        det = Detector.from_config(arch)
        det.init(args.seed if args.seed is not None else 0)
        pre = Preprocessor(target=arch.input_size)
    if args.data:
        meta = store.read_metadata(args.data)
        _check_repr(arch, meta)
        frame = store.read_frame(args.data, store.read_manifest(args.data)[0]["frame_id"], det.classes)
    else:
        frame = generate_synthetic_scene(SyntheticSceneSpec(), 0).to_sensor_frame(arch.representation)
    batch = prepare([frame], pre)
    stats = bench_inference(det, batch.rgb, batch.depth, args.reps, args.warmup)
    report = {**stats.to_dict(), "architecture": json.loads(arch.to_json())}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "bench.json", report)
    print(f"median {stats.median_ms:.2f} ms  p90 {stats.p90_ms:.2f} ms  ({stats.repetitions} reps)")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def _model_flags(p, with_train=True):
    p.add_argument("--config", help="JSON file with architecture/training keys; flags override it")
    p.add_argument("--arch", choices=ARCHS, help="fusion architecture")
    p.add_argument("--encoder", choices=ENCODERS)
    p.add_argument("--repr", choices=REPRS, help="lidar representation")
    p.add_argument("--seed", type=int)
    if with_train:
        p.add_argument("--iters", type=int)
        p.add_argument("--lr-step", dest="lr_step", type=int, help="divide lr by 10 every N iterations")
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--momentum", type=float)
        p.add_argument("--repeats", type=int, help="rerun with derived seeds and average the final metrics")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusiondet", description="Camera-lidar fusion detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("project", help="turn a point cloud into a range, sparse or dense depth PNG")
    p.add_argument("--cloud", required=True, help="velodyne .bin file")
    p.add_argument("--calib", help="KITTI-style calibration (needed for sparse/dense)")
    p.add_argument("--repr", choices=REPRS, default="dense")
    p.add_argument("--camera", type=int, default=2)
    p.add_argument("--size", type=_pair, help="image size W,H (default: from calib or KITTI)")
    p.add_argument("--window", type=int, default=9, help="densification window (odd)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth-dataset", help="write a synthetic, optionally corrupted dataset")
    p.add_argument("--count", type=int, default=64, help="number of frames (at most this many with --in)")
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.add_argument("--scene-seed", dest="scene_seed", type=int, default=0)
    p.add_argument("--color-jitter", dest="color_jitter", type=float, default=SyntheticSceneSpec.color_jitter,
                   help="blend weight of a random colour into each object's class colour")
    p.add_argument("--in", dest="source", help="corrupt this dataset directory instead of synthetic scenes")
    p.add_argument("--repr", choices=REPRS, default="dense")
    p.add_argument("--window", type=int, default=9)
    p.add_argument("--weights", type=_floats(3), default=(1.0, 2.0, 4.0), help="clean,partial,failed")
    p.add_argument("--patch-count", dest="patch_count", type=_pair, default=(1, 5))
    p.add_argument("--patch-area", dest="patch_area", type=_floats(2), default=(0.01, 0.15))
    p.add_argument("--failure-split", dest="failure_split", type=float, default=0.5)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--clean", action="store_true", help="skip corruption")
    mode.add_argument("--fail", choices=[s.value for s in Sensor], help="fail this sensor in every frame")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_dataset)

    p = sub.add_parser("train", help="train a detector on a dataset directory")
    p.add_argument("--data", required=True)
    _model_flags(p)
    p.add_argument("--split", type=_pair, help="TEST,TRAIN frame counts; frames after both are validation")
    p.add_argument("--early-stop", dest="early_stop", type=float,
                   help="abort when validation loss exceeds this multiple of the training loss")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class AP and mAP of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", type=_pair, help="TEST,TRAIN frame counts; evaluates the test part")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="inference timing (forward + decode + NMS)")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory; its first frame is timed")
    _model_flags(p, with_train=False)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def _validate(args):
    if args.command == "project" and args.repr != "range" and not args.calib:
        raise UsageError("--calib is required for sparse and dense projections")
    if getattr(args, "window", 9) < 1 or getattr(args, "window", 9) % 2 == 0:
        raise UsageError("--window must be a positive odd integer")
    if args.command == "synth-dataset":
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        if args.repr == "range" and not (args.clean or args.fail):
            raise UsageError("white-patch corruption needs camera-sized depth; use --clean or --fail with range")
    if args.command == "bench" and (args.reps < 1 or args.warmup < 0):
        raise UsageError("--reps must be >= 1 and --warmup >= 0")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        if args.command == "synth-dataset":
            _corruption_spec(args)
        return args.func(args)
    except (UsageError, IncompatibleCombination) as e:
        print(f"fusiondet: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"fusiondet: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FusionError as e:
        print(f"fusiondet: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as e:
        print(f"fusiondet: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # invariant violations and bugs
        print(f"fusiondet: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
