"""Depth images, pinhole back-projection, and the per-point noise covariance.

Depth is stored as 16-bit millimeters (0 = invalid) and converted to meters at
the image boundary; all computation downstream is metric.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def f_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)


# Kinect-like default at 320x240 (half of 525 px at 640x480).
DEFAULT_INTRINSICS = CameraIntrinsics(fx=262.5, fy=262.5, cx=160.0, cy=120.0, width=320, height=240)


@dataclass(frozen=True)
class DepthImage:
    """Organized 16-bit depth image; values are millimeters, 0 = invalid."""

    data: np.ndarray  # (height, width) uint16

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"depth data must be 2-D, got shape {data.shape}")
        if data.dtype != np.uint16:
            if np.any(data < 0) or np.any(data > 65535):
                raise ValueError("depth values must fit in uint16")
            data = data.astype(np.uint16)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NoiseModel:
    """Depth sensor noise: lateral sigma_px pixels, axial sigma_z = k_z * z^2."""

    sigma_px: float = 0.5
    k_z: float = 2.85e-3  # 1/m

    def __post_init__(self):
        if self.sigma_px < 0 or self.k_z < 0:
            raise ValueError("noise parameters must be non-negative")

    def sigma_z(self, z):
        """Axial depth noise std in meters at depth z meters."""
        return self.k_z * np.square(z)


def backproject(img: DepthImage, K: CameraIntrinsics) -> np.ndarray:
    """Organized point cloud (H, W, 3) in meters, camera frame; invalid = NaN.

    For a valid pixel (u, v) with depth z mm the point is
    (z/1000) * ((u - cx)/fx, (v - cy)/fy, 1).
    """
    if (img.width, img.height) != (K.width, K.height):
        raise ValueError(
            f"image size {img.width}x{img.height} does not match "
            f"intrinsics {K.width}x{K.height}"
        )
    z = img.data.astype(float) / 1000.0
    u = (np.arange(img.width) - K.cx) / K.fx
    v = (np.arange(img.height) - K.cy) / K.fy
    cloud = np.empty((img.height, img.width, 3))
    cloud[:, :, 0] = z * u[None, :]
    cloud[:, :, 1] = z * v[:, None]
    cloud[:, :, 2] = z
    cloud[img.data == 0] = np.nan
    return cloud


def point_covariance(p, K: CameraIntrinsics, nm: NoiseModel) -> np.ndarray:
    """3x3 position covariance of a measured point, in the camera frame.

    Diagonal in a ray-aligned frame: lateral std sigma_px * z / f on the two
    axes orthogonal to the viewing ray, axial std k_z * z^2 along the ray.
    """
    p = np.asarray(p, dtype=float)
    z = float(p[2])
    if z <= 0.0:
        raise ValueError(f"point must be in front of the camera, got z={z}")
    ray = p / np.linalg.norm(p)
    # Any orthonormal pair completing the ray; lateral variance is isotropic.
    e1 = np.cross(ray, [0.0, 0.0, 1.0])
    n1 = np.linalg.norm(e1)
    if n1 < 1e-12:
        e1 = np.array([1.0, 0.0, 0.0])
    else:
        e1 = e1 / n1
    e2 = np.cross(ray, e1)
    B = np.column_stack([e1, e2, ray])
    s_lat = nm.sigma_px * z / K.f_mean
    s_ax = nm.k_z * z * z
    return B @ np.diag([s_lat**2, s_lat**2, s_ax**2]) @ B.T


# -- PGM depth files (binary P5, maxval 65535, big-endian, millimeters) --


def save_depth_pgm(img: DepthImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n65535\n".encode("ascii"))
        fh.write(img.data.astype(">u2").tobytes())


def load_depth_pgm(path) -> DepthImage:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise ValueError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    pixels = np.frombuffer(raw[m.end():], dtype=">u2")
    if pixels.size != width * height:
        raise ValueError(
            f"{path}: expected {width * height} samples, found {pixels.size}"
        )
    return DepthImage(pixels.reshape(height, width).astype(np.uint16))


# -- Intrinsics sidecar JSON --


def save_intrinsics(K: CameraIntrinsics, path) -> None:
    payload = {
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "width": K.width, "height": K.height,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_intrinsics(path) -> CameraIntrinsics:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid intrinsics JSON: {exc}") from exc
    try:
        return CameraIntrinsics(
            fx=float(payload["fx"]), fy=float(payload["fy"]),
            cx=float(payload["cx"]), cy=float(payload["cy"]),
            width=int(payload["width"]), height=int(payload["height"]),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing intrinsics field {exc}") from exc
