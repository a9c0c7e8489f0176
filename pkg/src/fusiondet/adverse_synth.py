"""Adverse-weather corruption: white patches, sensor failure, 1:2:4 mixing.

Every random draw for frame ``i`` comes from a Philox generator keyed on
``(seed, i)``, so a frame's corruption does not depend on processing order.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset_io.frame import SensorFrame
from .errors import DimensionMismatch
from .lidar_repr import SENTINEL
from .rng import CORRUPTION_STREAM, frame_rng

WHITE = 255


class Category(str, enum.Enum):
    CLEAN = "clean"
    PARTIAL = "partial"
    CAMERA_FAILED = "camera_failed"
    LIDAR_FAILED = "lidar_failed"


class Sensor(str, enum.Enum):
    CAMERA = "camera"
    LIDAR = "lidar"


@dataclass(frozen=True)
class Patch:
    modality: Sensor
    x1: int
    y1: int
    x2: int
    y2: int

    def to_dict(self) -> dict:
        return {"modality": self.modality.value, "x1": self.x1, "y1": self.y1, "x2": self.x2, "y2": self.y2}


@dataclass(frozen=True)
class CorruptionSpec:
    seed: int = 0
    weights: tuple = (1, 2, 4)
    patch_count_range: tuple = (1, 5)
    patch_area_range: tuple = (0.01, 0.15)
    failure_split: float = 0.5

    def __post_init__(self):
        if len(self.weights) != 3 or any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("weights must be three non-negative numbers with positive sum")
        lo, hi = self.patch_count_range
        if not (0 <= lo <= hi):
            raise ValueError("invalid patch_count_range")
        a_lo, a_hi = self.patch_area_range
        if not (0 < a_lo <= a_hi <= 1):
            raise ValueError("patch_area_range must lie in (0, 1]")
        if not 0 <= self.failure_split <= 1:
            raise ValueError("failure_split must lie in [0, 1]")

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()


@dataclass
class CorruptionTag:
    category: Category
    patches: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"category": self.category.value, "patches": [p.to_dict() for p in self.patches]}


def _draw_category(spec: CorruptionSpec, rng: np.random.Generator) -> Category:
    k = rng.choice(3, p=spec.probabilities)
    if k == 0:
        return Category.CLEAN
    if k == 1:
        return Category.PARTIAL
    return Category.CAMERA_FAILED if rng.random() < spec.failure_split else Category.LIDAR_FAILED


def sample_category(spec: CorruptionSpec, index: int) -> Category:
    return _draw_category(spec, frame_rng(spec.seed, index, CORRUPTION_STREAM))


def draw_patches(height: int, width: int, spec: CorruptionSpec, rng, modality=Sensor.CAMERA):
    lo, hi = spec.patch_count_range
    n = int(rng.integers(lo, hi + 1))
    total = height * width
    patches = []
    for _ in range(n):
        area = rng.uniform(*spec.patch_area_range) * total
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        w = min(width, max(1, round(math.sqrt(area * aspect))))
        h = min(height, max(1, round(area / w)))
        w = min(width, max(w, math.ceil(area / h - 1e-9)))
        x1 = int(rng.integers(0, width - w + 1))
        y1 = int(rng.integers(0, height - h + 1))
        patches.append(Patch(modality, x1, y1, x1 + w, y1 + h))
    return patches


def apply_white_patches(rgb, depth, spec: CorruptionSpec, rng):
    """White out random rectangles, drawn independently for each modality.

    Returns copies of both images and the list of applied patches.
    """
    rgb = np.array(rgb, copy=True)
    depth = np.array(depth, copy=True)
    if rgb.shape[:2] != depth.shape[:2]:
        raise DimensionMismatch(f"camera {rgb.shape[:2]} vs depth {depth.shape[:2]}")
    h, w = depth.shape[:2]
    cam = draw_patches(h, w, spec, rng, Sensor.CAMERA)
    lid = draw_patches(h, w, spec, rng, Sensor.LIDAR)
    for p in cam:
        rgb[p.y1:p.y2, p.x1:p.x2] = WHITE
    for p in lid:
        depth[p.y1:p.y2, p.x1:p.x2] = SENTINEL
    return rgb, depth, cam + lid


def fail_sensor(frame: SensorFrame, which: Sensor) -> SensorFrame:
    out = frame.copy()
    if Sensor(which) is Sensor.LIDAR:
        out.depth[...] = SENTINEL
    else:
        # a white frame stands in for an "infinite" 8-bit camera stream
        out.rgb[...] = WHITE
    return out


def corrupt_frame(frame: SensorFrame, spec: CorruptionSpec, index: int) -> SensorFrame:
    rng = frame_rng(spec.seed, index, CORRUPTION_STREAM)
    category = _draw_category(spec, rng)
    if category is Category.CLEAN:
        out = frame.copy()
        out.tag = CorruptionTag(category)
        return out
    if category is Category.PARTIAL:
        rgb, depth, patches = apply_white_patches(frame.rgb, frame.depth, spec, rng)
        return frame.copy(rgb=rgb, depth=depth, tag=CorruptionTag(category, patches))
    which = Sensor.CAMERA if category is Category.CAMERA_FAILED else Sensor.LIDAR
    out = fail_sensor(frame, which)
    out.tag = CorruptionTag(category)
    return out


def synthesize_adverse_dataset(frames, spec: CorruptionSpec) -> list[SensorFrame]:
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    return [corrupt_frame(f, spec, i) for i, f in enumerate(frames)]
