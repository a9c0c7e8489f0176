"""Deterministic desk-scale scenes: coloured boxes over a sky/ground backdrop.

Each frame carries an RGB image, a dense ground-truth depth map (planar
lidar range per pixel, ``inf`` for sky), a lidar point cloud obtained by
back-projecting scanline samples of that map, and 2D ground-truth boxes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..calib_geometry import (
    CameraIntrinsics,
    Extrinsics,
    default_extrinsics,
    pixel_rays,
)
from ..detect_eval.boxes import CLASSES, BBox
from ..lidar_repr import SENTINEL, RangeGeometry, build_lidar_image_geom, build_sparse_depth, densify
from ..rng import SCENE_STREAM, frame_rng
from .frame import SensorFrame


@dataclass(frozen=True)
class ClassPrior:
    color: tuple
    width: tuple
    height: tuple


# Sizes in pixels at the default 64 x 192 resolution; every side is at
# least one feature cell (16 px) long so each object owns a cell centre.
DEFAULT_PRIORS = (
    ClassPrior((200, 45, 40), (36, 56), (20, 28)),  # car
    ClassPrior((45, 70, 200), (48, 72), (32, 44)),  # truck
    ClassPrior((215, 195, 45), (64, 88), (28, 40)),  # tram
    ClassPrior((45, 175, 60), (17, 22), (34, 48)),  # pedestrian
    ClassPrior((195, 60, 195), (20, 28), (28, 40)),  # cyclist
    ClassPrior((45, 195, 195), (36, 48), (28, 40)),  # van
)

SKY = np.array([150.0, 185.0, 230.0])
GROUND = np.array([105.0, 100.0, 95.0])


@dataclass(frozen=True)
class SyntheticSceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 192
    object_count: tuple = (1, 3)
    depth_range: tuple = (8.0, 40.0)
    max_range: float = 80.0
    camera_height: float = 1.6
    scan_step: int = 3
    column_keep: float = 0.7
    noise: float = 12.0
    color_jitter: float = 0.0  # blend weight of a random colour into the class colour
    kappa: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.08, 0.27)
    range_rows: int = 32
    range_cols: int = 128
    classes: tuple = CLASSES
    priors: tuple = field(default=DEFAULT_PRIORS)

    def __post_init__(self):
        lo, hi = self.object_count
        if not 0 <= lo <= hi:
            raise ValueError("invalid object_count range")
        if not 0 < self.depth_range[0] <= self.depth_range[1]:
            raise ValueError("invalid depth_range")
        if not 0 <= self.color_jitter <= 1:
            raise ValueError("color_jitter must lie in [0, 1]")
        if len(self.priors) != len(self.classes):
            raise ValueError("need one size/colour prior per class")

    def intrinsics(self) -> CameraIntrinsics:
        f = self.width / 2.0
        return CameraIntrinsics(f, f, self.width / 2.0, self.height / 2.0,
                                self.width, self.height, kappa=self.kappa)

    def extrinsics(self) -> Extrinsics:
        return default_extrinsics(self.translation)

    def range_geometry(self) -> RangeGeometry:
        intr = self.intrinsics()
        vfov = 2 * math.atan(intr.oy / intr.fy)
        hfov = 2 * math.atan(intr.ox / intr.fx)
        return RangeGeometry.centered(vfov, hfov, self.range_rows, self.range_cols)


@dataclass
class SyntheticFrame:
    frame_id: str
    rgb: np.ndarray
    depth: np.ndarray  # dense ground truth, float32
    cloud: np.ndarray  # (N, 3) float64, lidar frame
    sparse: np.ndarray  # expected sparse depth image of ``cloud``
    boxes: list
    intr: CameraIntrinsics
    ext: Extrinsics
    range_geometry: RangeGeometry

    def representation(self, kind: str, window: int = 9) -> np.ndarray:
        if kind == "sparse":
            return build_sparse_depth(self.cloud, self.intr, self.ext)
        if kind == "dense":
            return densify(build_sparse_depth(self.cloud, self.intr, self.ext), window)
        if kind == "range":
            return build_lidar_image_geom(self.cloud, self.range_geometry).grid
        raise ValueError(f"unknown representation {kind!r}")

    def to_sensor_frame(self, kind: str = "dense", window: int = 9) -> SensorFrame:
        return SensorFrame(self.rgb.copy(), self.representation(kind, window), list(self.boxes),
                           None, self.frame_id)


def _background(spec: SyntheticSceneSpec, intr: CameraIntrinsics):
    h, w = spec.height, spec.width
    rgb = np.empty((h, w, 3))
    depth = np.full((h, w), SENTINEL, dtype=np.float32)
    for v in range(h):
        below = v + 0.5 - intr.oy
        if below <= 0:
            t = v / max(intr.oy, 1)
            rgb[v] = SKY * (0.85 + 0.15 * t)
        else:
            d = spec.camera_height * intr.fy / below
            if d <= spec.max_range:
                depth[v] = np.float32(d)
            rgb[v] = GROUND * (0.7 + 0.3 * min(1.0, below / (h - intr.oy)))
    return rgb, depth


def _place_objects(spec: SyntheticSceneSpec, rng):
    lo, hi = spec.object_count
    n = int(rng.integers(lo, hi + 1))
    placed = []
    for _ in range(n):
        cls = int(rng.integers(len(spec.classes)))
        prior = spec.priors[cls]
        for _ in range(50):
            bw = int(rng.integers(prior.width[0], prior.width[1] + 1))
            bh = int(rng.integers(prior.height[0], prior.height[1] + 1))
            bw, bh = min(bw, spec.width), min(bh, spec.height)
            x1 = int(rng.integers(0, spec.width - bw + 1))
            y1 = int(rng.integers(0, spec.height - bh + 1))
            box = (x1, y1, x1 + bw, y1 + bh)
            if all(box[0] >= b[2] + 2 or b[0] >= box[2] + 2 or box[1] >= b[3] + 2 or b[1] >= box[3] + 2
                   for b, *_ in placed):
                z = float(np.float32(rng.uniform(*spec.depth_range)))
                tint = rng.uniform(40.0, 220.0, 3)
                placed.append((box, cls, z, tint))
                break
    return placed


def _back_project(us, vs, d, intr: CameraIntrinsics, ext: Extrinsics):
    """Lidar-frame points that project to pixel centres ``(us, vs)`` at planar range ``d``."""
    rays = pixel_rays(us + 0.5, vs + 0.5, intr)  # camera frame, z = 1
    q = rays @ ext.rotation  # rows: R^T a
    s = ext.rotation.T @ ext.translation
    qa, sa = q[:, :2], s[:2]
    a = (qa * qa).sum(1)
    b = qa @ sa
    c = sa @ sa - d.astype(np.float64) ** 2
    z = (b + np.sqrt(b * b - a * c)) / a
    return z[:, None] * q - s


def generate_synthetic_scene(spec: SyntheticSceneSpec, index: int) -> SyntheticFrame:
    rng = frame_rng(spec.seed, index, SCENE_STREAM)
    intr, ext = spec.intrinsics(), spec.extrinsics()
    rgb, depth = _background(spec, intr)
    zlo, zhi = spec.depth_range
    boxes = []
    for (x1, y1, x2, y2), cls, z, tint in sorted(_place_objects(spec, rng), key=lambda o: -o[2]):
        shade = 1.0 - 0.5 * ((z - zlo) / (zhi - zlo) if zhi > zlo else 0.0)
        color = (1 - spec.color_jitter) * np.asarray(spec.priors[cls].color) + spec.color_jitter * tint
        rgb[y1:y2, x1:x2] = color * shade
        depth[y1:y2, x1:x2] = z
        boxes.append(BBox(float(x1), float(y1), float(x2), float(y2), cls))
    rgb = rgb + rng.normal(0.0, spec.noise, rgb.shape)
    rgb = np.clip(np.round(rgb), 0, 255).astype(np.uint8)

    phase = int(rng.integers(spec.scan_step))
    rows = np.arange(phase, spec.height, spec.scan_step)
    keep = rng.random((len(rows), spec.width)) < spec.column_keep
    vv, uu = np.nonzero(keep)
    vv = rows[vv]
    d = depth[vv, uu]
    hit = np.isfinite(d)
    vv, uu, d = vv[hit], uu[hit], d[hit]
    cloud = _back_project(uu.astype(np.float64), vv.astype(np.float64), d, intr, ext)
    sparse = np.full_like(depth, SENTINEL)
    sparse[vv, uu] = d
    boxes.sort(key=lambda b: (b.y1, b.x1))
    return SyntheticFrame(f"{index:06d}", rgb, depth, cloud, sparse, boxes, intr, ext, spec.range_geometry())


def generate_frames(spec: SyntheticSceneSpec, count: int, start: int = 0,
                    kind: str = "dense", window: int = 9) -> list[SensorFrame]:
    return [generate_synthetic_scene(spec, i).to_sensor_frame(kind, window)
            for i in range(start, start + count)]
