"""Synthetic indoor worlds and a depth-camera renderer for end-to-end tests.

The world is a set of finite rectangles in a z-up frame.  A wheeled robot
carries the camera at a fixed mount: optical axis forward, image x to the
robot's right, image y downward.  The renderer casts one ray per pixel and
reproduces the sensor's quantization, axial noise and pixel dropout, so the
full segmentation/mapping/localization stack can be exercised against known
ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import os

import numpy as np

from .geometry import Pose, compose, vector_from_rotation
from .kernels import raycast_rects
from .mapping import (KeyframePolicy, ManifestRecord, build_map,
                      read_manifest, save_map, write_manifest)
from .segmentation import SegmentationParams
from .sensor import (DEFAULT_INTRINSICS, CameraIntrinsics, DepthImage, NoiseModel,
                     save_depth_pgm, save_intrinsics)

_MOUNT_ROT = np.array([[0.0, 0.0, 1.0],
                       [-1.0, 0.0, 0.0],
                       [0.0, -1.0, 0.0]])

#: Camera pose in the robot frame: optical axis along robot +x, 0.6 m up.
CAMERA_MOUNT = Pose(phi=vector_from_rotation(_MOUNT_ROT), t=np.array([0.0, 0.0, 0.6]))


@dataclass(frozen=True)
class Rect:
    """Finite rectangle spanning the z = 0 plane of its own frame."""

    pose: Pose
    half_u: float
    half_v: float

    def __post_init__(self) -> None:
        if not (self.half_u > 0.0 and self.half_v > 0.0):
            raise ValueError("rectangle half-extents must be positive")


@dataclass(frozen=True)
class SyntheticWorld:
    rects: tuple

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rot = np.stack([r.pose.rotation for r in self.rects])
        t = np.stack([r.pose.t for r in self.rects])
        half = np.array([[r.half_u, r.half_v] for r in self.rects])
        return rot, t, half


def _rect_from_axes(center, u_axis, v_axis, half_u, half_v) -> Rect:
    u = np.asarray(u_axis, dtype=np.float64)
    v = np.asarray(v_axis, dtype=np.float64)
    rot = np.column_stack((u, v, np.cross(u, v)))
    return Rect(pose=Pose(phi=vector_from_rotation(rot), t=np.asarray(center, dtype=np.float64)),
                half_u=half_u, half_v=half_v)


def _wall_x(x0: float, x1: float, y: float, z0: float = 0.0, z1: float = 2.6) -> Rect:
    """Vertical rectangle in a plane of constant y, spanning x0..x1, z0..z1."""
    return _rect_from_axes(((x0 + x1) / 2.0, y, (z0 + z1) / 2.0),
                           (1.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                           (x1 - x0) / 2.0, (z1 - z0) / 2.0)


def _wall_y(y0: float, y1: float, x: float, z0: float = 0.0, z1: float = 2.6) -> Rect:
    """Vertical rectangle in a plane of constant x, spanning y0..y1, z0..z1."""
    return _rect_from_axes((x, (y0 + y1) / 2.0, (z0 + z1) / 2.0),
                           (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
                           (y1 - y0) / 2.0, (z1 - z0) / 2.0)


def _hrect(x0: float, x1: float, y0: float, y1: float, z: float) -> Rect:
    """Horizontal rectangle at height z."""
    return _rect_from_axes(((x0 + x1) / 2.0, (y0 + y1) / 2.0, z),
                           (1.0, 0.0, 0.0), (0.0, 1.0, 0.0),
                           (x1 - x0) / 2.0, (y1 - y0) / 2.0)


# Corridor geometry: an L of two legs of different widths, 2.6 m tall.
# Leg 1 runs along +x (half-width 1.1); leg 2 along +y at centerline x = 14
# (half-width 1.4).  The width difference plus the irregular furnishings keep
# distant corridor sections from aliasing onto each other.
_HALF_W1 = 1.1
_HALF_W2 = 1.4
_X_MID = 14.0
_X_INNER = _X_MID - _HALF_W2
_X_END = _X_MID + _HALF_W2
_Y_END = 10.0
_H = 2.6


def corridor_world(seed: int = 0) -> SyntheticWorld:
    """L-shaped corridor furnished with wall cabinets and recessed alcoves.

    Cabinets stand proud of the walls (front, two sides and a top face);
    alcoves are full-height recesses with a back plane and two jambs.  Both
    have randomized sizes and aperiodic spacing, so each stretch of corridor
    exposes a distinctive pattern of plane offsets: a registration that
    slides the scene along the corridor keeps the floor and wall matches but
    loses every alcove and cabinet plane to the plane-offset gate.
    """
    rng = np.random.default_rng(seed)
    rects = [
        _hrect(-0.2, _X_END + 0.6, -_HALF_W1 - 0.6, _HALF_W1 + 0.6, 0.0),
        _hrect(_X_INNER - 0.6, _X_END + 0.6, _HALF_W1, _Y_END + 0.2, 0.0),
        _wall_y(-_HALF_W1, _HALF_W1, 0.0),
        _wall_x(_X_INNER, _X_END, _Y_END),
    ]

    def furnish(zero: np.ndarray, along: np.ndarray, inward: np.ndarray,
                lo: float, hi: float) -> None:
        """Populate one wall with cabinets and alcoves, then fill the gaps.

        ``zero`` is the wall-line point at coordinate 0, ``along`` the unit
        direction of increasing wall coordinate, ``inward`` the unit normal
        pointing into the corridor.  ``lo..hi`` is the usable span.
        """

        def vwall(a: float, b: float, depth: float, z1: float = _H) -> Rect:
            c = zero + along * ((a + b) / 2.0) + inward * depth
            return _rect_from_axes((c[0], c[1], z1 / 2.0), along, (0.0, 0.0, 1.0),
                                   (b - a) / 2.0, z1 / 2.0)

        def jamb(a: float, d0: float, d1: float, z1: float = _H) -> Rect:
            c = zero + along * a + inward * ((d0 + d1) / 2.0)
            return _rect_from_axes((c[0], c[1], z1 / 2.0), inward, (0.0, 0.0, 1.0),
                                   abs(d1 - d0) / 2.0, z1 / 2.0)

        def top(a: float, b: float, d0: float, d1: float, z1: float) -> Rect:
            c = zero + along * ((a + b) / 2.0) + inward * ((d0 + d1) / 2.0)
            return _rect_from_axes((c[0], c[1], z1), along, inward,
                                   (b - a) / 2.0, abs(d1 - d0) / 2.0)

        pieces = []  # (start, end) intervals of plain wall
        pos = lo
        edge = lo
        while True:
            pos += rng.uniform(0.4, 1.2)
            kind_alcove = rng.uniform() < 0.45
            w = rng.uniform(0.9, 1.6) if kind_alcove else rng.uniform(0.5, 1.6)
            if pos + w > hi:
                break
            if kind_alcove:
                d = rng.uniform(0.2, 0.45)
                rects.append(vwall(pos, pos + w, -d))
                rects.append(jamb(pos, -d, 0.0))
                rects.append(jamb(pos + w, -d, 0.0))
                pieces.append((edge, pos))
                edge = pos + w
            else:
                d = rng.uniform(0.22, 0.6)
                h = rng.uniform(0.8, 2.2)
                rects.append(vwall(pos, pos + w, d, h))
                rects.append(jamb(pos, 0.0, d, h))
                rects.append(jamb(pos + w, 0.0, d, h))
                rects.append(top(pos, pos + w, 0.0, d, h))
            pos += w
        pieces.append((edge, hi))
        for a, b in pieces:
            if b - a > 1e-6:
                rects.append(vwall(a, b, 0.0))

    furnish(np.array([0.0, -_HALF_W1, 0.0]), np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]), 0.0, _X_END)
    furnish(np.array([0.0, _HALF_W1, 0.0]), np.array([1.0, 0.0, 0.0]),
            np.array([0.0, -1.0, 0.0]), 0.0, _X_INNER)
    furnish(np.array([_X_INNER, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
            np.array([1.0, 0.0, 0.0]), _HALF_W1, _Y_END)
    furnish(np.array([_X_END, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
            np.array([-1.0, 0.0, 0.0]), -_HALF_W1, _Y_END)
    return SyntheticWorld(rects=tuple(rects))


def render_depth(world: SyntheticWorld, camera_pose: Pose,
                 intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                 noise: NoiseModel | None = None, dropout: float = 0.0,
                 rng: np.random.Generator | None = None,
                 max_range: float | None = None) -> DepthImage:
    """Render the world from a camera world pose into a 16-bit depth image.

    When a noise model is given, each true depth z receives Gaussian noise of
    standard deviation ``sigma_z(z)`` before millimeter quantization, and each
    pixel is independently dropped with probability ``dropout``.  The random
    draws have a fixed layout (one normal and one uniform per pixel), so a
    seeded generator reproduces images exactly.
    """
    if (noise is not None or dropout > 0.0) and rng is None:
        raise ValueError("rendering with noise or dropout requires an explicit rng")
    if not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must be in [0, 1), got {dropout}")
    h, w = intrinsics.height, intrinsics.width
    cols, rows = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
    dirs_cam = np.column_stack(((cols.ravel() - intrinsics.cx) / intrinsics.fx,
                                (rows.ravel() - intrinsics.cy) / intrinsics.fy,
                                np.ones(h * w)))
    rot = camera_pose.rotation
    dirs_world = dirs_cam @ rot.T
    rect_rot, rect_t, rect_half = world.as_arrays()
    # The parameter along an un-normalized ray with camera-frame dir_z = 1 is
    # exactly the camera-frame depth of the hit point.
    z = raycast_rects(camera_pose.t, dirs_world, rect_rot, rect_t, rect_half)
    valid = np.isfinite(z)
    if max_range is not None:
        valid &= z <= max_range
    if rng is not None:
        jitter = rng.standard_normal(h * w)
        drop = rng.uniform(size=h * w)
        if noise is not None:
            z = np.where(valid, z + noise.sigma_z(np.where(valid, z, 0.0)) * jitter, z)
        if dropout > 0.0:
            valid &= drop >= dropout
    with np.errstate(invalid="ignore"):
        mm = np.where(valid, np.rint(np.where(valid, z, 0.0) * 1000.0), 0.0)
    mm = np.clip(mm, 0.0, 65535.0)
    mm[mm < 1.0] = 0.0
    return DepthImage(mm.astype(np.uint16).reshape(h, w))


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

_L1 = 11.6
_ARC_R = 1.4
_ARC_C = (1.0 + _L1, _ARC_R)
_LARC = math.pi / 2.0 * _ARC_R
_L2 = 7.6
PATH_LENGTH = _L1 + _LARC + _L2


def _path_pose(s: float) -> tuple[float, float, float]:
    """Centerline position and heading at arclength ``s``."""
    if s < _L1:
        return 1.0 + s, 0.0, 0.0
    if s < _L1 + _LARC:
        a = (s - _L1) / _ARC_R
        ang = -math.pi / 2.0 + a
        return (_ARC_C[0] + _ARC_R * math.cos(ang),
                _ARC_C[1] + _ARC_R * math.sin(ang), a)
    s2 = s - _L1 - _LARC
    return _ARC_C[0] + _ARC_R, _ARC_R + s2, math.pi / 2.0


def _traverse(lat_amp: float, lat_period: float, lat_phase: float,
              hdg_amp: float, hdg_period: float, hdg_phase: float,
              emit_d: float, emit_theta: float) -> list:
    poses = []
    last_xy = None
    last_th = None
    s = 0.0
    while s <= PATH_LENGTH:
        x, y, th = _path_pose(s)
        lat = lat_amp * math.sin(2.0 * math.pi * s / lat_period + lat_phase)
        x -= lat * math.sin(th)
        y += lat * math.cos(th)
        th += hdg_amp * math.sin(2.0 * math.pi * s / hdg_period + hdg_phase)
        if last_xy is None or math.hypot(x - last_xy[0], y - last_xy[1]) >= emit_d \
                or abs((th - last_th + math.pi) % (2.0 * math.pi) - math.pi) >= emit_theta:
            poses.append(Pose(phi=np.array([0.0, 0.0, th]), t=np.array([x, y, 0.0])))
            last_xy = (x, y)
            last_th = th
        s += 0.02
    return poses


def mapping_trajectory() -> list:
    """Robot poses for the map-building traverse (gentle sweep, dense frames)."""
    return _traverse(0.10, 6.3, 0.0, math.radians(4.0), 4.7, 0.0, 0.25, math.radians(7.5))


def query_trajectory() -> list:
    """Robot poses for the query traverse: offset lane, strong heading weave."""
    return _traverse(0.17, 5.1, 1.3, math.radians(14.0), 1.7, 0.7, 0.5, math.radians(5.0))


# ---------------------------------------------------------------------------
# Benchmark dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkData:
    """File locations and sizes of a generated benchmark dataset."""

    root: str
    map_path: str
    mapping_manifest: str
    query_manifest: str
    n_mapping_frames: int
    n_query_frames: int
    n_models: int


def _perturbed_odometry(gt: Pose, rng: np.random.Generator) -> Pose:
    wobble = Pose(phi=np.array([0.0, 0.0, rng.normal(0.0, math.radians(0.3))]),
                  t=np.array([rng.normal(0.0, 0.01), rng.normal(0.0, 0.01), 0.0]))
    return compose(gt, wobble)


def synth_benchmark(out_dir, seed: int = 0,
                    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
                    noise: NoiseModel | None = None, dropout: float = 0.05,
                    policy: KeyframePolicy | None = None,
                    params: SegmentationParams | None = None,
                    max_range: float = 8.0,
                    build: bool = True) -> BenchmarkData:
    """Generate a complete synthetic benchmark dataset under ``out_dir``.

    Writes depth frames for a mapping traverse and a query traverse of the
    corridor world, JSON-Lines manifests for both (queries carry ground
    truth), the shared camera intrinsics, and - unless ``build`` is off - the
    topological map built from the mapping frames.  All randomness derives
    from ``seed``; rerunning with the same seed reproduces every file byte
    for byte.
    """
    noise = noise or NoiseModel()
    out_dir = os.fspath(out_dir)
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    world = corridor_world(seed)
    intr_rel = "intrinsics.json"
    save_intrinsics(intrinsics, os.path.join(out_dir, intr_rel))

    def record_frames(robot_poses, prefix: str, rng, with_gt: bool) -> list:
        records = []
        for i, robot in enumerate(robot_poses):
            cam = compose(robot, CAMERA_MOUNT)
            img = render_depth(world, cam, intrinsics, noise=noise, dropout=dropout,
                               rng=rng, max_range=max_range)
            rel = f"frames/{prefix}_{i:04d}.pgm"
            save_depth_pgm(img, os.path.join(out_dir, rel))
            records.append(ManifestRecord(
                frame_id=i, depth_path=rel, intrinsics_path=intr_rel,
                odometry=_perturbed_odometry(robot, rng),
                ground_truth=robot if with_gt else None))
        return records

    rng_map = np.random.default_rng([seed, 1])
    rng_query = np.random.default_rng([seed, 2])
    map_records = record_frames(mapping_trajectory(), "map", rng_map, with_gt=True)
    query_records = record_frames(query_trajectory(), "query", rng_query, with_gt=True)
    mapping_manifest = os.path.join(out_dir, "mapping.jsonl")
    query_manifest = os.path.join(out_dir, "queries.jsonl")
    write_manifest(map_records, mapping_manifest)
    write_manifest(query_records, query_manifest)

    map_path = os.path.join(out_dir, "map.json")
    n_models = 0
    if build:
        topo = build_map(read_manifest(mapping_manifest), CAMERA_MOUNT,
                         policy=policy, params=params, noise=noise)
        save_map(topo, map_path)
        n_models = len(topo.models)
    return BenchmarkData(root=out_dir, map_path=map_path,
                         mapping_manifest=mapping_manifest,
                         query_manifest=query_manifest,
                         n_mapping_frames=len(map_records),
                         n_query_frames=len(query_records),
                         n_models=n_models)
