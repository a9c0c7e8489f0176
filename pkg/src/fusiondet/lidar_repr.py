"""Lidar point cloud to 2D representations: range image, sparse and dense depth.

Empty cells hold ``+inf`` ("no return"). Collisions keep the nearest range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calib_geometry import (
    CameraIntrinsics,
    Extrinsics,
    as_cloud,
    in_front,
    planar_range,
    project_points,
    transform_to_camera_frame,
)
from .errors import InvalidWindow

SENTINEL = np.inf


@dataclass(frozen=True)
class RangeGeometry:
    """Grid layout of a range image.

    ``top_index`` / ``left_index`` are the raw channel and azimuth indices
    that land in row 0 / column 0; rows grow downward (lower elevation),
    columns grow rightward (negative azimuth, i.e. to the lidar's right).
    """

    delta_phi: float
    delta_theta: float
    rows: int
    cols: int
    top_index: int
    left_index: int

    @classmethod
    def velodyne64(cls) -> "RangeGeometry":
        dphi, dtheta = math.radians(0.43), math.radians(0.18)
        return cls(dphi, dtheta, 64, 512, math.floor(math.radians(2.0) / dphi), 255)

    @classmethod
    def centered(cls, vfov: float, hfov: float, rows: int, cols: int) -> "RangeGeometry":
        return cls(vfov / rows, hfov / cols, rows, cols, rows // 2 - 1, cols // 2 - 1)


@dataclass
class RangeImage:
    grid: np.ndarray
    delta_phi: float
    delta_theta: float


@dataclass
class IntegralPair:
    sum_table: np.ndarray
    count_table: np.ndarray

    def rect_sum(self, r0, c0, r1, c1):
        """Sum over rows ``[r0, r1)`` and columns ``[c0, c1)``."""
        s = self.sum_table
        return s[r1, c1] - s[r0, c1] - s[r1, c0] + s[r0, c0]

    def rect_count(self, r0, c0, r1, c1):
        n = self.count_table
        return n[r1, c1] - n[r0, c1] - n[r1, c0] + n[r0, c0]


def lidar_image_indices(cloud, delta_phi: float, delta_theta: float):
    """Raw (channel, azimuth-bin) indices, before the grid offset."""
    if delta_phi <= 0 or delta_theta <= 0:
        raise ValueError("angular resolutions must be positive")
    p = as_cloud(cloud)
    norm = np.linalg.norm(p, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        elev = np.arcsin(np.clip(p[:, 2] / norm, -1.0, 1.0))
    c = np.floor(elev / delta_phi)
    r = np.floor(np.arctan2(p[:, 1], p[:, 0]) / delta_theta)
    valid = norm > 0
    return c, r, valid


def build_lidar_image(
    cloud,
    delta_phi: float,
    delta_theta: float,
    rows: int,
    cols: int,
    top_index: int | None = None,
    left_index: int | None = None,
) -> RangeImage:
    if rows < 1 or cols < 1:
        raise ValueError("range image needs at least one row and column")
    top = rows // 2 - 1 if top_index is None else top_index
    left = cols // 2 - 1 if left_index is None else left_index
    p = as_cloud(cloud)
    grid = np.full((rows, cols), SENTINEL, dtype=np.float32)
    if len(p):
        c, r, valid = lidar_image_indices(p, delta_phi, delta_theta)
        row = top - c
        col = left - r
        ok = valid & (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
        d = planar_range(p[ok]).astype(np.float32)
        np.minimum.at(grid, (row[ok].astype(np.intp), col[ok].astype(np.intp)), d)
    return RangeImage(grid, delta_phi, delta_theta)


def build_lidar_image_geom(cloud, geom: RangeGeometry) -> RangeImage:
    return build_lidar_image(
        cloud, geom.delta_phi, geom.delta_theta, geom.rows, geom.cols,
        geom.top_index, geom.left_index,
    )


def build_sparse_depth(cloud, intr: CameraIntrinsics, ext: Extrinsics) -> np.ndarray:
    """Project the cloud into the camera image; points outside the FOV are skipped."""
    p = as_cloud(cloud)
    img = np.full((intr.height, intr.width), SENTINEL, dtype=np.float32)
    if not len(p):
        return img
    cam = transform_to_camera_frame(p, ext)
    front = in_front(cam)
    p, cam = p[front], cam[front]
    if not len(p):
        return img
    uv = np.floor(project_points(cam, intr))
    u, v = uv[:, 0], uv[:, 1]
    ok = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    d = planar_range(p[ok]).astype(np.float32)
    np.minimum.at(img, (v[ok].astype(np.intp), u[ok].astype(np.intp)), d)
    return img


def integral_image(img) -> IntegralPair:
    img = np.asarray(img)
    finite = np.isfinite(img)
    h, w = img.shape
    sums = np.zeros((h + 1, w + 1), dtype=np.float64)
    counts = np.zeros((h + 1, w + 1), dtype=np.int64)
    sums[1:, 1:] = np.where(finite, img, 0.0).astype(np.float64).cumsum(0).cumsum(1)
    counts[1:, 1:] = finite.astype(np.int64).cumsum(0).cumsum(1)
    return IntegralPair(sums, counts)


def densify(img, k: int = 9) -> np.ndarray:
    """Fill each pixel with the mean of finite values in its k x k window.

    The window is clipped at the image border. Pixels whose window holds no
    finite value stay at the sentinel. Cost is independent of ``k``.
    """
    if not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
        raise InvalidWindow(f"window size must be an odd integer >= 1, got {k!r}")
    img = np.asarray(img)
    h, w = img.shape
    half = k // 2
    tables = integral_image(img)
    r0 = np.clip(np.arange(h) - half, 0, h)[:, None]
    r1 = np.clip(np.arange(h) + half + 1, 0, h)[:, None]
    c0 = np.clip(np.arange(w) - half, 0, w)[None, :]
    c1 = np.clip(np.arange(w) + half + 1, 0, w)[None, :]
    total = tables.rect_sum(r0, c0, r1, c1)
    count = tables.rect_count(r0, c0, r1, c1)
    out = np.full((h, w), SENTINEL, dtype=np.float64)
    has = count > 0
    out[has] = total[has] / count[has]
    return out.astype(img.dtype if img.dtype.kind == "f" else np.float32)
