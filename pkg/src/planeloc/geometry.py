"""Rigid-body pose algebra on axis-angle orientation vectors.

Orientation is a 3-vector whose direction is the rotation axis and whose
magnitude is the rotation angle in radians (canonical magnitude in [0, pi]).
A pose (phi, t) maps a point p to R(phi) @ p + t.  Pose beliefs carry a 6x6
covariance ordered (phi, t).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Below this angle the Rodrigues coefficients switch to series expansions.
SMALL_ANGLE = 1e-8


def _as_vector3(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_vector(phi) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (Rodrigues' formula)."""
    phi = _as_vector3(phi, "phi")
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < SMALL_ANGLE**2:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        theta = np.sqrt(theta2)
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def check_rotation(R, tol: float = 1e-6) -> np.ndarray:
    """Validate that R is a proper rotation within tol; returns R as float array."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation must be finite")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (violation {err:.3e})")
    if np.linalg.det(R) < 0.0:
        raise ValueError("matrix is a reflection, not a rotation")
    return R


def vector_from_rotation(R) -> np.ndarray:
    """Canonical axis-angle vector (magnitude in [0, pi]) of a rotation matrix.

    Extraction goes through the quaternion (Shepperd's method) so accuracy is
    uniform over the whole angle range, including near pi.  At exactly pi the
    axis sign is fixed by making its first nonzero component positive.
    """
    R = check_rotation(R)
    t = np.trace(R)
    if t > 0.0:
        s = 2.0 * np.sqrt(t + 1.0)
        w = 0.25 * s
        v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        v = np.empty(3)
        v[i] = 0.25 * s
        v[j] = (R[j, i] + R[i, j]) / s
        v[k] = (R[k, i] + R[i, k]) / s
        w = (R[k, j] - R[j, k]) / s
    if w < 0.0:
        w, v = -w, -v
    nv = np.linalg.norm(v)
    if nv < 1e-12:
        return np.zeros(3)
    if w < 1e-12:
        # Half-turn: phi and -phi coincide; pick a deterministic sign.
        nz = np.nonzero(np.abs(v) > 1e-12)[0]
        if nz.size and v[nz[0]] < 0.0:
            v = -v
        return v / nv * np.pi
    return v * (2.0 * np.arctan2(nv, w) / nv)


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of the rotation exponential.

    Satisfies R(phi + d) ~= R(phi) @ R(right_jacobian(phi) @ d) to first
    order, which makes d(R(phi) @ a)/dphi = -R(phi) @ skew(a) @ J_r(phi).
    """
    phi = _as_vector3(phi, "phi")
    theta2 = float(phi @ phi)
    K = skew(phi)
    if theta2 < SMALL_ANGLE**2:
        b = 0.5 - theta2 / 24.0
        c = 1.0 / 6.0 - theta2 / 120.0
    else:
        theta = np.sqrt(theta2)
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - b * K + c * (K @ K)


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    return float(np.linalg.norm(vector_from_rotation(R)))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_out = R(phi) @ p + t."""

    phi: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _as_vector3(self.phi, "phi"))
        object.__setattr__(self, "t", _as_vector3(self.t, "t"))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.zeros(3))

    @cached_property
    def rotation(self) -> np.ndarray:
        """Rotation matrix of ``phi``; cached, so treat poses as immutable."""
        return rotation_from_vector(self.phi)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    Ra = rotation_from_vector(a.phi)
    Rb = rotation_from_vector(b.phi)
    return Pose(vector_from_rotation(Ra @ Rb), Ra @ b.t + a.t)


def invert(a: Pose) -> Pose:
    Ra = rotation_from_vector(a.phi)
    return Pose(vector_from_rotation(Ra.T), -(Ra.T @ a.t))


def transform_point(a: Pose, p) -> np.ndarray:
    p = _as_vector3(p, "p")
    return rotation_from_vector(a.phi) @ p + a.t


def relative_angle(a: Pose, b: Pose) -> float:
    """Geodesic angle between the orientations of two poses, in radians."""
    Ra = rotation_from_vector(a.phi)
    Rb = rotation_from_vector(b.phi)
    return rotation_angle(Ra.T @ Rb)


@dataclass(frozen=True)
class PoseBelief:
    """Gaussian pose belief: mean pose and 6x6 covariance ordered (phi, t)."""

    mean: Pose
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (6, 6):
            raise ValueError(f"covariance must be 6x6, got shape {cov.shape}")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariance must be finite")
        if np.abs(cov - cov.T).max() > 1e-10:
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "cov", cov)

    def is_positive_semidefinite(self, tol: float = 1e-12) -> bool:
        return bool(np.linalg.eigvalsh(self.cov).min() >= -tol)
