"""On-disk dataset directories.

Layout::

    dataset.json           global metadata (representation, counts, seeds)
    manifest.jsonl         one record per frame: index, frame_id, category, patches, seed
    image/<id>.png         8-bit RGB
    depth/<id>.png         16-bit depth (see ``depth_png``)
    label/<id>.txt         KITTI-style labels
    calib/<id>.txt         KITTI-style calibration (optional)
    velodyne/<id>.bin      raw point cloud (optional)
"""
from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..detect_eval.boxes import CLASSES
from ..errors import DataError, MissingKey
from .depth_png import depth_png_bytes, read_depth_png
from .frame import SensorFrame
from .kitti import format_labels, read_labels

META = "dataset.json"
MANIFEST = "manifest.jsonl"


def rgb_png_bytes(rgb) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_frame(root, frame: SensorFrame, classes=CLASSES, calib: str | None = None, cloud: bytes | None = None):
    root = Path(root)
    fid = frame.frame_id
    for sub in ("image", "depth", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "image" / f"{fid}.png").write_bytes(rgb_png_bytes(frame.rgb))
    (root / "depth" / f"{fid}.png").write_bytes(depth_png_bytes(frame.depth))
    (root / "label" / f"{fid}.txt").write_text(format_labels(frame.boxes, classes))
    if calib is not None:
        (root / "calib").mkdir(exist_ok=True)
        (root / "calib" / f"{fid}.txt").write_text(calib)
    if cloud is not None:
        (root / "velodyne").mkdir(exist_ok=True)
        (root / "velodyne" / f"{fid}.bin").write_bytes(cloud)


def write_metadata(root, meta: dict, records):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / META).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    with open(root / MANIFEST, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_metadata(root) -> dict:
    path = Path(root) / META
    if not path.is_file():
        raise DataError(f"{root} is not a dataset directory (no {META})")
    return json.loads(path.read_text())


def read_manifest(root) -> list[dict]:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise MissingKey(f"{root} has no {MANIFEST}")
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{MANIFEST} line {n}: {e.msg}") from None
    return out


def read_frame(root, frame_id: str, classes=CLASSES) -> SensorFrame:
    root = Path(root)
    try:
        with Image.open(root / "image" / f"{frame_id}.png") as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        depth = read_depth_png(root / "depth" / f"{frame_id}.png")
        boxes = read_labels((root / "label" / f"{frame_id}.txt").read_text(), classes)
    except FileNotFoundError as e:
        raise DataError(f"frame {frame_id}: missing file {e.filename}") from None
    return SensorFrame(rgb, depth, boxes, None, frame_id)


def read_dataset(root, classes=CLASSES) -> list[SensorFrame]:
    return [read_frame(root, r["frame_id"], classes) for r in read_manifest(root)]
