"""Rigid transforms, the distorted pinhole projection and FOV filtering.

Point clouds are ``(N, 3)`` float arrays. Lidar frame: x forward, y left,
z up. The projection negates x and y before normalisation
(``x_n = -x / z``), so the camera frame it expects has x pointing left,
y pointing up and z along the optical axis. A point is in front of the
camera when its camera-frame z is positive; see :func:`in_front`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDepth

ORTHO_TOL = 1e-9
DEPTH_EPS = 1e-9

# Camera frame used by the projection, expressed in the lidar frame:
# camera x = lidar y (left), camera y = lidar z (up), camera z = lidar x.
LIDAR_TO_CAMERA_AXES = np.array(
    [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
)

# Maps a conventional (x right, y down) camera frame onto the one above.
CONVENTIONAL_TO_PROJECTION = np.diag([-1.0, -1.0, 1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    ox: float
    oy: float
    width: int
    height: int
    skew: float = 0.0
    kappa: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (0 <= self.ox < self.width and 0 <= self.oy < self.height):
            raise ValueError("optical center must lie inside the image")
        kappa = tuple(float(k) for k in self.kappa)
        if len(kappa) != 5:
            raise ValueError("expected 5 distortion coefficients")
        object.__setattr__(self, "kappa", kappa)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.ox], [0.0, self.fy, self.oy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Extrinsics:
    """Lidar frame to camera frame: ``p_cam = R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(rot.T @ rot, np.eye(3), rtol=0.0, atol=ORTHO_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def inverse_apply(self, points: np.ndarray) -> np.ndarray:
        """Camera frame back to lidar frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation


def as_cloud(points) -> np.ndarray:
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.size == 0:
        return cloud.reshape(0, 3)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {cloud.shape}")
    return cloud


def transform_to_camera_frame(cloud, ext: Extrinsics) -> np.ndarray:
    cloud = as_cloud(cloud)
    return cloud @ ext.rotation.T + ext.translation


def planar_range(points) -> np.ndarray | float:
    """Distance in the lidar's horizontal plane, ``sqrt(x^2 + y^2)``."""
    p = np.asarray(points, dtype=np.float64)
    return np.hypot(p[..., 0], p[..., 1])


def in_front(cam_points: np.ndarray) -> np.ndarray:
    """Positive-depth test for camera-frame points (single place for the sign convention)."""
    return cam_points[..., 2] > 0


def project_points(cam_points, intr: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame points to real-valued pixels, returns ``(N, 2)`` (u, v)."""
    p = np.asarray(cam_points, dtype=np.float64)
    z = p[..., 2]
    if np.any(np.abs(z) < DEPTH_EPS):
        raise DegenerateDepth("point lies on the camera plane (|z| < 1e-9)")
    xn = -p[..., 0] / z
    yn = -p[..., 1] / z
    k1, k2, k3, k4, k5 = intr.kappa
    r2 = xn * xn + yn * yn
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = radial * xn + 2.0 * k4 * xn * yn + k5 * (r2 + 2.0 * xn * xn)
    yd = radial * yn + 2.0 * k5 * xn * yn + k4 * (r2 + 2.0 * yn * yn)
    u = intr.fx * xd + intr.skew * yd + intr.ox
    v = intr.fy * yd + intr.oy
    return np.stack([u, v], axis=-1)


def project_point(p, intr: CameraIntrinsics) -> tuple[float, float]:
    u, v = project_points(np.asarray(p, dtype=np.float64).reshape(3), intr)
    return float(u), float(v)


def fov_mask(cloud, intr: CameraIntrinsics, ext: Extrinsics) -> np.ndarray:
    cam = transform_to_camera_frame(cloud, ext)
    keep = in_front(cam)
    if not keep.any():
        return keep
    uv = project_points(cam[keep], intr)
    inside = (
        (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
    )
    keep[np.flatnonzero(keep)[~inside]] = False
    return keep


def fov_filter(cloud, intr: CameraIntrinsics, ext: Extrinsics) -> np.ndarray:
    cloud = as_cloud(cloud)
    return cloud[fov_mask(cloud, intr, ext)]


def undistort_normalized(xd, yd, kappa, iters: int = 50):
    """Invert the distortion polynomial by fixed-point iteration."""
    k1, k2, k3, k4, k5 = kappa
    xn, yn = np.array(xd, dtype=np.float64), np.array(yd, dtype=np.float64)
    for _ in range(iters):
        r2 = xn * xn + yn * yn
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * k4 * xn * yn + k5 * (r2 + 2.0 * xn * xn)
        dy = 2.0 * k5 * xn * yn + k4 * (r2 + 2.0 * yn * yn)
        xn = (xd - dx) / radial
        yn = (yd - dy) / radial
    return xn, yn


def pixel_rays(u, v, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions (z = 1) whose projection is ``(u, v)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    yd = (v - intr.oy) / intr.fy
    xd = (u - intr.ox - intr.skew * yd) / intr.fx
    xn, yn = undistort_normalized(xd, yd, intr.kappa)
    return np.stack([-xn, -yn, np.ones_like(xn)], axis=-1)


def default_extrinsics(translation=(0.0, 0.0, 0.0)) -> Extrinsics:
    """Lidar and camera axes aligned as in a forward-facing vehicle rig."""
    return Extrinsics(LIDAR_TO_CAMERA_AXES.copy(), np.asarray(translation, dtype=np.float64))
