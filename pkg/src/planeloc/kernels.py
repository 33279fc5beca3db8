"""Hot numeric kernels, each with a compiled and a vectorized-numpy backend.

The active backend is chosen at import time by :mod:`planeloc.accel`; both
implementations of a kernel are kept importable so they can be compared
directly in tests and benchmarks.
"""
from __future__ import annotations

import numpy as np

from .accel import USE_NUMBA, njit

_EPS_DIR = 1e-12
_MIN_RANGE = 1e-6


# ---------------------------------------------------------------------------
# Ray casting against a set of finite rectangles
# ---------------------------------------------------------------------------

def _raycast_rects_numpy(origin: np.ndarray, dirs: np.ndarray,
                         rect_rot: np.ndarray, rect_t: np.ndarray,
                         rect_half: np.ndarray) -> np.ndarray:
    best = np.full(dirs.shape[0], np.inf)
    for j in range(rect_rot.shape[0]):
        rot = rect_rot[j]
        o = rot.T @ (origin - rect_t[j])
        d = dirs @ rot
        dz = d[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -o[2] / dz
            x = o[0] + s * d[:, 0]
            y = o[1] + s * d[:, 1]
        hit = (np.abs(dz) > _EPS_DIR) & (s > _MIN_RANGE) & (s < best)
        hit &= (np.abs(x) <= rect_half[j, 0]) & (np.abs(y) <= rect_half[j, 1])
        best[hit] = s[hit]
    return best


@njit(cache=True)
def _raycast_rects_numba(origin, dirs, rect_rot, rect_t, rect_half):  # pragma: no cover - exercised via dispatch
    n = dirs.shape[0]
    m = rect_rot.shape[0]
    o = np.empty((m, 3))
    for j in range(m):
        for k in range(3):
            o[j, k] = (rect_rot[j, 0, k] * (origin[0] - rect_t[j, 0])
                       + rect_rot[j, 1, k] * (origin[1] - rect_t[j, 1])
                       + rect_rot[j, 2, k] * (origin[2] - rect_t[j, 2]))
    best = np.full(n, np.inf)
    for i in range(n):
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        b = np.inf
        for j in range(m):
            ddz = dx * rect_rot[j, 0, 2] + dy * rect_rot[j, 1, 2] + dz * rect_rot[j, 2, 2]
            if abs(ddz) <= _EPS_DIR:
                continue
            s = -o[j, 2] / ddz
            if s <= _MIN_RANGE or s >= b:
                continue
            ddx = dx * rect_rot[j, 0, 0] + dy * rect_rot[j, 1, 0] + dz * rect_rot[j, 2, 0]
            x = o[j, 0] + s * ddx
            if abs(x) > rect_half[j, 0]:
                continue
            ddy = dx * rect_rot[j, 0, 1] + dy * rect_rot[j, 1, 1] + dz * rect_rot[j, 2, 1]
            y = o[j, 1] + s * ddy
            if abs(y) > rect_half[j, 1]:
                continue
            b = s
        best[i] = b
    return best


def raycast_rects(origin: np.ndarray, dirs: np.ndarray, rect_rot: np.ndarray,
                  rect_t: np.ndarray, rect_half: np.ndarray) -> np.ndarray:
    """Intersect rays with two-sided rectangles; return per-ray hit parameter.

    Rays are ``origin + s * dirs[i]``.  Each rectangle ``j`` occupies the
    ``z = 0`` plane of its own frame (``rect_rot[j]`` maps rectangle axes to
    world, ``rect_t[j]`` is its centre) and extends ``+-rect_half[j]`` along
    its local x/y axes.  Misses are ``inf``.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    rect_rot = np.ascontiguousarray(rect_rot, dtype=np.float64)
    rect_t = np.ascontiguousarray(rect_t, dtype=np.float64)
    rect_half = np.ascontiguousarray(rect_half, dtype=np.float64)
    if USE_NUMBA:
        return _raycast_rects_numba(origin, dirs, rect_rot, rect_t, rect_half)
    return _raycast_rects_numpy(origin, dirs, rect_rot, rect_t, rect_half)


# ---------------------------------------------------------------------------
# Per-triangle worst point-to-plane violation
# ---------------------------------------------------------------------------

def _max_excess_numpy(pts: np.ndarray, tol: np.ndarray, tri: np.ndarray,
                      planes: np.ndarray, n_tri: int) -> tuple[np.ndarray, np.ndarray]:
    best = np.full(n_tri, -np.inf)
    arg = np.full(n_tri, -1, dtype=np.int64)
    idx = np.nonzero(tri >= 0)[0]
    if idx.size == 0:
        return best, arg
    t = tri[idx]
    p = pts[idx]
    dist = np.abs(np.einsum("ij,ij->i", p, planes[t, :3]) - planes[t, 3])
    exc = dist - tol[idx]
    # Sorted by (triangle, -excess, index): the first row per triangle is the
    # winner, with ties resolved toward the smallest point index to mirror the
    # strict-comparison loop in the compiled backend.
    order = np.lexsort((idx, -exc, t))
    t_sorted = t[order]
    first = np.ones(t_sorted.size, dtype=bool)
    first[1:] = t_sorted[1:] != t_sorted[:-1]
    sel = order[first]
    best[t[sel]] = exc[sel]
    arg[t[sel]] = idx[sel]
    return best, arg


@njit(cache=True)
def _max_excess_numba(pts, tol, tri, planes, n_tri):  # pragma: no cover - exercised via dispatch
    best = np.full(n_tri, -np.inf)
    arg = np.full(n_tri, -1, dtype=np.int64)
    for i in range(pts.shape[0]):
        t = tri[i]
        if t < 0:
            continue
        dist = abs(planes[t, 0] * pts[i, 0] + planes[t, 1] * pts[i, 1]
                   + planes[t, 2] * pts[i, 2] - planes[t, 3])
        exc = dist - tol[i]
        if exc > best[t]:
            best[t] = exc
            arg[t] = i
    return best, arg


def max_plane_excess(pts: np.ndarray, tol: np.ndarray, tri: np.ndarray,
                     planes: np.ndarray, n_tri: int) -> tuple[np.ndarray, np.ndarray]:
    """For every triangle, find its worst point against the triangle's plane.

    ``pts`` are 3-D points, ``tri`` assigns each point to a triangle (or -1),
    ``planes`` holds rows ``(nx, ny, nz, d)`` with unit normals so that the
    orthogonal distance of point ``p`` is ``|n . p - d|``.  Returns per-triangle
    ``excess = distance - tol`` maxima and the index of the offending point
    (-1 where a triangle has no points).  A triangle needs refinement when its
    excess is positive.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    tol = np.ascontiguousarray(tol, dtype=np.float64)
    tri = np.ascontiguousarray(tri, dtype=np.int64)
    planes = np.ascontiguousarray(planes, dtype=np.float64)
    if USE_NUMBA:
        return _max_excess_numba(pts, tol, tri, planes, n_tri)
    return _max_excess_numpy(pts, tol, tri, planes, n_tri)
