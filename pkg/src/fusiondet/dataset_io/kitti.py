"""Readers and writers for KITTI-style velodyne, calibration and label files."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..calib_geometry import CONVENTIONAL_TO_PROJECTION, CameraIntrinsics, Extrinsics
from ..detect_eval.boxes import CLASSES, IGNORE, BBox
from ..errors import MalformedLine, MalformedMatrix, MissingKey, TruncatedRecord

KITTI_IMAGE_SIZE = (1242, 375)
RECORD_BYTES = 16
# calibration files print 7 significant digits, so rotations are only nearly orthonormal
ROTATION_SNAP_TOL = 1e-4


@dataclass
class LidarScan:
    points: np.ndarray  # (N, 3) float64
    intensity: np.ndarray  # (N,) float32

    def __len__(self):
        return len(self.points)


def read_point_cloud(blob: bytes) -> LidarScan:
    if len(blob) % RECORD_BYTES:
        raise TruncatedRecord(
            f"{len(blob)} bytes is not a multiple of {RECORD_BYTES}; "
            f"trailing record starts at byte {len(blob) - len(blob) % RECORD_BYTES}"
        )
    raw = np.frombuffer(blob, dtype="<f4").reshape(-1, 4)
    return LidarScan(raw[:, :3].astype(np.float64), raw[:, 3].astype(np.float32))


def write_point_cloud(points, intensity=None) -> bytes:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inten = np.zeros(len(pts)) if intensity is None else np.asarray(intensity).reshape(-1)
    raw = np.empty((len(pts), 4), dtype="<f4")
    raw[:, :3] = pts
    raw[:, 3] = inten
    return raw.tobytes()


def _parse_keyed(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise MalformedMatrix(f"line {n}: expected 'KEY: values'")
        try:
            out[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError:
            raise MalformedMatrix(f"line {n}: non-numeric value for {key.strip()}") from None
    return out


def _matrix(values: dict, key: str, shape) -> np.ndarray:
    if key not in values:
        raise MissingKey(f"calibration is missing {key}")
    v = values[key]
    if v.size != int(np.prod(shape)):
        raise MalformedMatrix(f"{key}: expected {int(np.prod(shape))} values, got {v.size}")
    return v.reshape(shape)


def read_calibration(text: str, camera: int = 2, width: int | None = None, height: int | None = None):
    """Map KITTI ``P<camera>``, ``R0_rect`` and ``Tr_velo_to_cam`` onto (intrinsics, extrinsics).

    KITTI's camera frame has x right and y down; the projection here uses
    x left and y up, so the rotation is pre-multiplied by
    :data:`CONVENTIONAL_TO_PROJECTION`. Optional ``D<camera>`` (5
    distortion coefficients) and ``S<camera>`` (width height) keys are
    honoured; KITTI's rectified images imply zero distortion.
    """
    values = _parse_keyed(text)
    p = _matrix(values, f"P{camera}", (3, 4))
    r0 = _matrix(values, "R0_rect", (3, 3))
    tr = _matrix(values, "Tr_velo_to_cam", (3, 4))
    kappa = tuple(_matrix(values, f"D{camera}", (5,))) if f"D{camera}" in values else (0.0,) * 5
    if f"S{camera}" in values:
        width, height = (int(v) for v in _matrix(values, f"S{camera}", (2,)))
    width = KITTI_IMAGE_SIZE[0] if width is None else width
    height = KITTI_IMAGE_SIZE[1] if height is None else height
    k = p[:, :3]
    if abs(k[1, 0]) > 1e-12 or abs(k[2, 0]) > 1e-12 or abs(k[2, 1]) > 1e-12 or abs(k[2, 2] - 1) > 1e-12:
        raise MalformedMatrix(f"P{camera}: left 3x3 block is not an upper-triangular intrinsic matrix")
    intr = CameraIntrinsics(k[0, 0], k[1, 1], k[0, 2], k[1, 2], width, height, skew=k[0, 1], kappa=kappa)
    t_cam = np.linalg.solve(k, p[:, 3])
    flip = CONVENTIONAL_TO_PROJECTION
    try:
        ext = Extrinsics(_snap_rotation(flip @ r0 @ tr[:, :3]), flip @ (r0 @ tr[:, 3] + t_cam))
    except ValueError as exc:
        raise MalformedMatrix(f"R0_rect / Tr_velo_to_cam: {exc}") from None
    return intr, ext


def _snap_rotation(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation (SVD) when ``rot`` is orthonormal up to print precision."""
    if np.abs(rot.T @ rot - np.eye(3)).max() > ROTATION_SNAP_TOL:
        return rot
    u, _, vt = np.linalg.svd(rot)
    return u @ vt


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def format_calibration(intr: CameraIntrinsics, ext: Extrinsics, camera: int = 2) -> str:
    """Inverse of :func:`read_calibration` (identity rectification, zero baseline)."""
    p = np.zeros((3, 4))
    p[:, :3] = intr.matrix
    flip = CONVENTIONAL_TO_PROJECTION
    tr = np.zeros((3, 4))
    tr[:, :3] = flip @ ext.rotation
    tr[:, 3] = flip @ ext.translation
    lines = [
        f"P{camera}: {_fmt(p)}",
        f"R0_rect: {_fmt(np.eye(3))}",
        f"Tr_velo_to_cam: {_fmt(tr)}",
        f"D{camera}: {_fmt(intr.kappa)}",
        f"S{camera}: {intr.width} {intr.height}",
    ]
    return "\n".join(lines) + "\n"


KITTI_NAMES = {"car": "car", "truck": "truck", "tram": "tram", "pedestrian": "pedestrian",
               "cyclist": "cyclist", "van": "van"}


def read_labels(text: str, classes=CLASSES) -> list[BBox]:
    """Parse KITTI label lines; types outside ``classes`` get ``cls = IGNORE``."""
    index = {c.lower(): i for i, c in enumerate(classes)}
    boxes = []
    for n, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):
            raise MalformedLine(n, f"expected 15 fields, got {len(fields)}")
        try:
            x1, y1, x2, y2 = (float(v) for v in fields[4:8])
            [float(v) for v in fields[1:4] + fields[8:]]
        except ValueError:
            raise MalformedLine(n, "non-numeric field") from None
        cls = index.get(KITTI_NAMES.get(fields[0].lower(), fields[0].lower()), IGNORE)
        try:
            boxes.append(BBox(x1, y1, x2, y2, cls))
        except ValueError as exc:
            raise MalformedLine(n, str(exc)) from None
    return boxes


def format_labels(boxes, classes=CLASSES) -> str:
    lines = []
    for b in boxes:
        name = "DontCare" if b.cls == IGNORE else classes[b.cls].capitalize()
        lines.append(
            f"{name} 0.00 0 0.00 {b.x1:.2f} {b.y1:.2f} {b.x2:.2f} {b.y2:.2f} "
            "0.00 0.00 0.00 0.00 0.00 0.00 0.00"
        )
    return "".join(line + "\n" for line in lines)
