"""Uncertainty-carrying planar surface features extracted from depth segments.

A feature is an oriented local frame on a planar patch: the origin sits at the
patch centroid, the first two axes span the plane along its principal
directions, and the third axis is the normal (pointing back toward the
camera).  Deviations from the nominal plane are parametrized by a small
disturbance ``q = (s_x, s_y, r)``: the perturbed plane has unit normal
``(s_x, s_y, 1) / sqrt(s_x^2 + s_y^2 + 1)`` and offset ``r`` along the normal,
both expressed in the feature frame.  ``sigma_q`` stores the variances of
``q`` implied by the sensor noise model and the patch extent.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .geometry import Pose, check_rotation, vector_from_rotation
from .sensor import CameraIntrinsics, NoiseModel, point_covariance

# Variance floor for the plane-offset disturbance (m^2).  Keeps weights finite
# on noise-free synthetic input without influencing real measurements.
MIN_OFFSET_VAR = 1e-10

_DEGENERACY_EIGVAL = 1e-12


class DegenerateSegmentError(ValueError):
    """Raised when a point set does not determine a plane."""


@dataclass(frozen=True)
class PlaneFit:
    """Least-squares plane through a point set.

    ``axes`` columns are (major in-plane direction, minor in-plane direction,
    normal); ``moments`` are the corresponding second moments of the points
    about the centroid, sorted descending.  ``rms`` is the root-mean-square
    orthogonal distance of the points from the plane.
    """

    centroid: np.ndarray
    axes: np.ndarray
    moments: np.ndarray
    rms: float


def fit_plane(points: np.ndarray) -> PlaneFit:
    """Fit a total-least-squares plane to an (N, 3) point set."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if pts.shape[0] < 3:
        raise DegenerateSegmentError(f"need at least 3 points to fit a plane, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    centroid = pts.mean(axis=0)
    d = pts - centroid
    cov = (d.T @ d) / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[1] <= _DEGENERACY_EIGVAL:
        raise DegenerateSegmentError("points are collinear; plane orientation is undetermined")
    axes = np.column_stack((evecs[:, 2], evecs[:, 1], evecs[:, 0]))
    moments = np.array([evals[2], evals[1]])
    rms = math.sqrt(max(evals[0], 0.0))
    return PlaneFit(centroid=centroid, axes=axes, moments=moments, rms=rms)


@dataclass(frozen=True)
class SurfaceSegmentFeature:
    """Planar segment summarized as a frame, disturbance variances and extent.

    ``pose`` maps feature coordinates to the frame the segment was observed in
    (camera frame for scene segments, keyframe camera frame for map segments).
    ``sigma_q`` holds the variances of the plane disturbance ``(s_x, s_y, r)``;
    ``spread`` the in-plane second moments (descending); ``point_count`` the
    number of supporting depth points.
    """

    pose: Pose
    sigma_q: np.ndarray
    spread: np.ndarray
    point_count: int

    def __post_init__(self) -> None:
        sq = np.asarray(self.sigma_q, dtype=np.float64)
        sp = np.asarray(self.spread, dtype=np.float64)
        if sq.shape != (3,):
            raise ValueError(f"sigma_q must have shape (3,), got {sq.shape}")
        if sp.shape != (2,):
            raise ValueError(f"spread must have shape (2,), got {sp.shape}")
        if not (np.all(np.isfinite(sq)) and np.all(sq > 0.0)):
            raise ValueError("sigma_q entries must be positive and finite")
        if not (np.all(np.isfinite(sp)) and sp[0] >= sp[1] > 0.0):
            raise ValueError("spread must satisfy spread[0] >= spread[1] > 0")
        if self.point_count < 3:
            raise ValueError(f"point_count must be at least 3, got {self.point_count}")
        check_rotation(self.pose.rotation)
        object.__setattr__(self, "sigma_q", sq)
        object.__setattr__(self, "spread", sp)

    @property
    def normal(self) -> np.ndarray:
        """Unit plane normal in the observation frame."""
        return self.pose.rotation[:, 2]

    @property
    def offset(self) -> float:
        """Signed plane offset: the plane is ``normal . p = offset``."""
        return float(self.normal @ self.pose.t)

    def ellipse_area(self) -> float:
        """Elliptical area proxy from the in-plane second moments."""
        return math.pi * math.sqrt(float(self.spread[0] * self.spread[1]))


def _orient_axes(axes: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Resolve the sign ambiguities of the principal axes deterministically.

    The normal is flipped to face the sensor origin, the major axis is flipped
    so its largest-magnitude component is positive, and the minor axis is
    recomputed to keep the frame right-handed.
    """
    e1 = axes[:, 0].copy()
    n = axes[:, 2].copy()
    if float(n @ centroid) > 0.0:
        n = -n
    k = int(np.argmax(np.abs(e1)))
    if e1[k] < 0.0:
        e1 = -e1
    e2 = np.cross(n, e1)
    return np.column_stack((e1, e2, n))


def build_feature(points: np.ndarray, intrinsics: CameraIntrinsics,
                  noise: NoiseModel) -> SurfaceSegmentFeature:
    """Condense a segment's 3-D points into a :class:`SurfaceSegmentFeature`.

    The offset variance follows from projecting the sensor covariance of the
    centroid onto the plane normal; the slope variances shrink with the
    in-plane extent of the patch, so large segments constrain orientation
    tightly while small ones stay loose.
    """
    fit = fit_plane(points)
    axes = _orient_axes(fit.axes, fit.centroid)
    normal = axes[:, 2]
    cov_c = point_covariance(fit.centroid, intrinsics, noise)
    var_r = max(float(normal @ cov_c @ normal), MIN_OFFSET_VAR)
    lam1, lam2 = float(fit.moments[0]), float(fit.moments[1])
    sigma_q = np.array([var_r / (lam1 + var_r), var_r / (lam2 + var_r), var_r])
    pose = Pose(phi=vector_from_rotation(axes), t=fit.centroid)
    return SurfaceSegmentFeature(pose=pose, sigma_q=sigma_q,
                                 spread=np.array([lam1, lam2]),
                                 point_count=int(np.asarray(points).shape[0]))


def perturbed_normal(s_x: float, s_y: float) -> np.ndarray:
    """Unit normal of the disturbed plane, in feature coordinates."""
    n = np.array([s_x, s_y, 1.0])
    return n / math.sqrt(s_x * s_x + s_y * s_y + 1.0)


def features_from_segments(cloud: np.ndarray, segments: list[np.ndarray],
                           intrinsics: CameraIntrinsics,
                           noise: NoiseModel) -> list[SurfaceSegmentFeature]:
    """Build features for each segment given the backprojected cloud.

    ``segments`` holds flat pixel indices into the (H, W) image.  Segments
    whose points turn out to be degenerate are skipped.
    """
    flat = cloud.reshape(-1, 3)
    out: list[SurfaceSegmentFeature] = []
    for idx in segments:
        pts = flat[idx]
        try:
            out.append(build_feature(pts, intrinsics, noise))
        except DegenerateSegmentError:
            continue
    return out
