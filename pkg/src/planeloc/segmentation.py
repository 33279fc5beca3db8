"""Planar segmentation of depth images: triangulation split, region merge.

The pipeline triangulates the valid depth pixels over the image plane,
iteratively refines the triangulation until every triangle is planar within
tolerance, drops triangles that bridge depth discontinuities, and then
agglomerates adjacent triangles into maximal planar regions using a
cheapest-first merge driven by the root-mean-square plane residual of the
merged region.
"""
from __future__ import annotations

from dataclasses import dataclass
import heapq
import math

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .kernels import max_plane_excess
from .sensor import CameraIntrinsics, DepthImage, NoiseModel, backproject, load_depth_pgm, save_depth_pgm

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SegmentationParams:
    """Tuning knobs for the split and merge stages.

    ``tau_split`` caps the point-to-plane deviation a triangle may tolerate
    before it is refined; ``tau_merge`` caps the RMS plane residual of merged
    regions.  Both are in meters and are widened with the expected axial noise
    at the observed depth when a noise model is supplied.  ``max_depth_jump``
    is the per-pixel depth discontinuity (meters per pixel of edge length)
    beyond which a triangle is considered to bridge two surfaces.
    """

    tau_split: float = 0.010
    tau_merge: float = 0.008
    min_points: int = 100
    max_depth_jump: float = 0.050
    seed_grid: int = 40
    max_refine_passes: int = 30

    def __post_init__(self) -> None:
        if not (self.tau_split > 0.0 and self.tau_merge > 0.0):
            raise ValueError("tau_split and tau_merge must be positive")
        if self.min_points <= 0:
            raise ValueError(f"min_points must be positive, got {self.min_points}")
        if self.max_depth_jump <= 0.0:
            raise ValueError("max_depth_jump must be positive")
        if self.seed_grid < 2 or self.max_refine_passes < 1:
            raise ValueError("seed_grid must be >= 2 and max_refine_passes >= 1")


@dataclass
class TriMesh:
    """Refined image-plane triangulation of the valid depth points."""

    shape: tuple[int, int]
    pixel_index: np.ndarray
    points: np.ndarray
    uv: np.ndarray
    sigma_z: np.ndarray
    simplices: np.ndarray
    vertex_ids: np.ndarray
    point_tri: np.ndarray
    neighbors: np.ndarray
    tri_alive: np.ndarray

    @property
    def n_triangles(self) -> int:
        return int(self.simplices.shape[0])


@dataclass(frozen=True)
class SegmentLabeling:
    """Final segmentation: a label image and per-segment pixel index lists.

    ``labels`` is (H, W) int32 with -1 for unsegmented pixels; ``segments[k]``
    holds the sorted flat pixel indices of segment ``k``.
    """

    labels: np.ndarray
    segments: list

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.dtype != np.int32:
            raise ValueError("labels must be a 2-D int32 array")
        if len(self.segments) and lab.max() != len(self.segments) - 1:
            raise ValueError("label ids do not match the segment list")

    @property
    def n_segments(self) -> int:
        return len(self.segments)


def _empty_mesh(shape: tuple[int, int]) -> TriMesh:
    return TriMesh(shape=shape,
                   pixel_index=np.empty(0, dtype=np.int64),
                   points=np.empty((0, 3)),
                   uv=np.empty((0, 2)),
                   sigma_z=np.empty(0),
                   simplices=np.empty((0, 3), dtype=np.int64),
                   vertex_ids=np.empty(0, dtype=np.int64),
                   point_tri=np.empty(0, dtype=np.int64),
                   neighbors=np.empty((0, 3), dtype=np.int64),
                   tri_alive=np.empty(0, dtype=bool))


def _seed_vertices(uv: np.ndarray, shape: tuple[int, int], grid: int) -> np.ndarray:
    """Initial vertex set: convex hull corners plus one point per grid cell.

    Hull vertices guarantee that every valid pixel falls inside the
    triangulated domain; the grid picks the point nearest each cell centre so
    the starting mesh is roughly uniform.
    """
    hull = ConvexHull(uv)
    chosen = set(int(v) for v in hull.vertices)
    h, w = shape
    cell_col = np.minimum(uv[:, 0].astype(np.int64) // grid, (w - 1) // grid)
    cell_row = np.minimum(uv[:, 1].astype(np.int64) // grid, (h - 1) // grid)
    cell = cell_row * ((w - 1) // grid + 1) + cell_col
    centre_u = (cell_col + 0.5) * grid
    centre_v = (cell_row + 0.5) * grid
    d2 = (uv[:, 0] - centre_u) ** 2 + (uv[:, 1] - centre_v) ** 2
    order = np.lexsort((np.arange(uv.shape[0]), d2, cell))
    cell_sorted = cell[order]
    first = np.ones(cell_sorted.size, dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    chosen.update(int(i) for i in order[first])
    return np.array(sorted(chosen), dtype=np.int64)


def _triangle_planes(pts: np.ndarray, simplices: np.ndarray,
                     vertex_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Plane (nx, ny, nz, d) through each triangle's 3-D vertices."""
    v = pts[vertex_ids[simplices]]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(n, axis=1)
    ok = norm > 1e-12
    n[ok] /= norm[ok, None]
    d = np.einsum("ij,ij->i", n, v[:, 0])
    return np.column_stack((n, d)), ok


def split_triangulate(cloud: np.ndarray, params: SegmentationParams,
                      noise: NoiseModel | None = None) -> TriMesh:
    """Refine an image-plane triangulation until triangles are planar in 3-D.

    ``cloud`` is the (H, W, 3) backprojected point image with NaN at invalid
    pixels.  Starting from a sparse seed mesh, each pass assigns every valid
    point to its containing triangle, measures the worst point-to-plane
    deviation per triangle, and promotes the offending points to vertices of
    the next, denser triangulation.  Afterwards triangles whose edges jump in
    depth faster than ``max_depth_jump`` per pixel are discarded, so separate
    surfaces end up in disconnected mesh components.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 3 or cloud.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) cloud, got shape {cloud.shape}")
    shape = (cloud.shape[0], cloud.shape[1])
    valid = np.isfinite(cloud[:, :, 2])
    pixel_index = np.nonzero(valid.ravel())[0]
    if pixel_index.size < 3:
        return _empty_mesh(shape)
    points = cloud.reshape(-1, 3)[pixel_index]
    rows, cols = np.divmod(pixel_index, shape[1])
    uv = np.column_stack((cols, rows)).astype(np.float64)
    if noise is not None:
        sigma_z = noise.sigma_z(points[:, 2])
    else:
        sigma_z = np.zeros(points.shape[0])
    tol = params.tau_split + 3.0 * sigma_z

    try:
        verts = _seed_vertices(uv, shape, params.seed_grid)
    except QhullError:
        return _empty_mesh(shape)
    is_vertex = np.zeros(points.shape[0], dtype=bool)
    is_vertex[verts] = True

    tri = None
    point_tri = None
    planes = None
    for _ in range(params.max_refine_passes):
        try:
            tri = Delaunay(uv[verts])
        except QhullError:
            return _empty_mesh(shape)
        point_tri = tri.find_simplex(uv).astype(np.int64)
        planes, plane_ok = _triangle_planes(points, tri.simplices.astype(np.int64), verts)
        excess, arg = max_plane_excess(points, tol, point_tri, planes, tri.simplices.shape[0])
        excess[~plane_ok] = -np.inf
        cand = arg[excess > 0.0]
        cand = cand[(cand >= 0) & ~is_vertex[cand]]
        if cand.size == 0:
            break
        is_vertex[cand] = True
        verts = np.sort(np.concatenate((verts, cand)))
    assert tri is not None and point_tri is not None and planes is not None

    simplices = tri.simplices.astype(np.int64)
    neighbors = tri.neighbors.astype(np.int64)
    # Depth-discontinuity filter: compare vertex depths edge by edge, scaled
    # by the edge's pixel length so slanted-but-continuous surfaces survive.
    vid = verts[simplices]
    z = points[vid, 2]
    alive = np.ones(simplices.shape[0], dtype=bool)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        dz = np.abs(z[:, a] - z[:, b])
        px = np.linalg.norm(uv[vid[:, a]] - uv[vid[:, b]], axis=1)
        alive &= dz <= params.max_depth_jump * np.maximum(1.0, px)
    point_tri = point_tri.copy()
    assigned = point_tri >= 0
    dead = ~alive
    point_tri[assigned & dead[np.clip(point_tri, 0, None)]] = -1

    return TriMesh(shape=shape, pixel_index=pixel_index, points=points, uv=uv,
                   sigma_z=sigma_z, simplices=simplices, vertex_ids=verts,
                   point_tri=point_tri, neighbors=neighbors, tri_alive=alive)


def _smallest_eigval3(xx: float, xy: float, xz: float,
                      yy: float, yz: float, zz: float) -> float:
    """Smallest eigenvalue of a symmetric 3x3 matrix (trigonometric form)."""
    q = (xx + yy + zz) / 3.0
    axx, ayy, azz = xx - q, yy - q, zz - q
    p2 = axx * axx + ayy * ayy + azz * azz + 2.0 * (xy * xy + xz * xz + yz * yz)
    p = math.sqrt(p2 / 6.0)
    if p < 1e-300:
        return q
    bxx, byy, bzz = axx / p, ayy / p, azz / p
    bxy, bxz, byz = xy / p, xz / p, yz / p
    det = (bxx * (byy * bzz - byz * byz)
           - bxy * (bxy * bzz - byz * bxz)
           + bxz * (bxy * byz - byy * bxz))
    r = min(1.0, max(-1.0, det / 2.0))
    phi = math.acos(r) / 3.0
    return q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)


class _RegionStats:
    """Additive second-moment statistics of a point region."""

    __slots__ = ("n", "s", "m", "w")

    def __init__(self, n: float, s: np.ndarray, m: np.ndarray, w: float) -> None:
        self.n = n
        self.s = s
        self.m = m
        self.w = w

    def merged_rms(self, other: "_RegionStats") -> float:
        n = self.n + other.n
        s = self.s + other.s
        m = self.m + other.m
        c = s / n
        xx = m[0] / n - c[0] * c[0]
        xy = m[1] / n - c[0] * c[1]
        xz = m[2] / n - c[0] * c[2]
        yy = m[3] / n - c[1] * c[1]
        yz = m[4] / n - c[1] * c[2]
        zz = m[5] / n - c[2] * c[2]
        return math.sqrt(max(_smallest_eigval3(xx, xy, xz, yy, yz, zz), 0.0))

    def absorb(self, other: "_RegionStats") -> None:
        self.n += other.n
        self.s = self.s + other.s
        self.m = self.m + other.m
        self.w += other.w


def merge_hierarchical(mesh: TriMesh, params: SegmentationParams) -> SegmentLabeling:
    """Agglomerate mesh triangles into planar segments, cheapest merge first.

    Candidate merges are scored by the RMS plane residual the united region
    would have, normalized by the merge tolerance (widened with the expected
    sensor noise of the involved points).  Merging stops when the cheapest
    remaining candidate exceeds its tolerance.  Regions are then filtered to
    ``min_points`` and split into 4-connected components.
    """
    n_tri = mesh.n_triangles
    labels = np.full(mesh.shape, -1, dtype=np.int32)
    if n_tri == 0:
        return SegmentLabeling(labels=labels, segments=[])

    pt = mesh.point_tri
    assigned = pt >= 0
    t_idx = pt[assigned]
    p = mesh.points[assigned]
    counts = np.bincount(t_idx, minlength=n_tri).astype(np.float64)
    sums = np.empty((n_tri, 3))
    moms = np.empty((n_tri, 6))
    for k in range(3):
        sums[:, k] = np.bincount(t_idx, weights=p[:, k], minlength=n_tri)
    pairs = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    for k, (a, b) in enumerate(pairs):
        moms[:, k] = np.bincount(t_idx, weights=p[:, a] * p[:, b], minlength=n_tri)
    sig = np.bincount(t_idx, weights=mesh.sigma_z[assigned], minlength=n_tri)

    alive = mesh.tri_alive & (counts > 0)
    stats: dict[int, _RegionStats] = {}
    region_tris: dict[int, list] = {}
    nbrs: dict[int, set] = {}
    stamp: dict[int, int] = {}
    for t in range(n_tri):
        if not alive[t]:
            continue
        stats[t] = _RegionStats(counts[t], sums[t], moms[t], float(sig[t]))
        region_tris[t] = [t]
        stamp[t] = 0
        ns = set()
        for nb in mesh.neighbors[t]:
            if nb >= 0 and alive[nb]:
                ns.add(int(nb))
        nbrs[t] = ns

    tau2 = params.tau_merge * params.tau_merge

    def cost(a: int, b: int) -> float:
        sa, sb = stats[a], stats[b]
        rms = sa.merged_rms(sb)
        mean_sig = (sa.w + sb.w) / (sa.n + sb.n)
        tol = math.sqrt(tau2 + (1.5 * mean_sig) ** 2)
        return rms / tol

    heap: list = []
    for a in stats:
        for b in nbrs[a]:
            if a < b:
                heapq.heappush(heap, (cost(a, b), a, b, stamp[a], stamp[b]))

    while heap:
        c, a, b, sa, sb = heapq.heappop(heap)
        if a not in stats or b not in stats or stamp[a] != sa or stamp[b] != sb:
            continue
        if c > 1.0:
            break
        stats[a].absorb(stats[b])
        region_tris[a].extend(region_tris[b])
        new_nb = (nbrs[a] | nbrs[b]) - {a, b}
        for nb in nbrs[b]:
            nbrs[nb].discard(b)
        del stats[b], region_tris[b], nbrs[b], stamp[b]
        stamp[a] += 1
        nbrs[a] = new_nb
        for nb in sorted(new_nb):
            nbrs[nb].add(a)
            lo, hi = (a, nb) if a < nb else (nb, a)
            heapq.heappush(heap, (cost(lo, hi), lo, hi, stamp[lo], stamp[hi]))

    # Region pixels -> connected components -> final segments.  Regions are
    # renumbered compactly so the per-region reductions stay vectorized.
    rids = sorted(region_tris)
    tri_compact = np.full(n_tri, -1, dtype=np.int64)
    for i, rid in enumerate(rids):
        tri_compact[region_tris[rid]] = i
    point_compact = tri_compact[t_idx]
    pix_assigned = mesh.pixel_index[assigned]
    keep = point_compact >= 0
    point_compact = point_compact[keep]
    pix_assigned = pix_assigned[keep]
    region_size = np.bincount(point_compact, minlength=len(rids))
    min_pix = np.full(len(rids), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(min_pix, point_compact, pix_assigned)

    segments: list = []
    flat_labels = labels.ravel()
    for i in np.argsort(min_pix, kind="stable"):
        if region_size[i] < params.min_points:
            continue
        mask = np.zeros(mesh.shape, dtype=bool)
        mask.ravel()[pix_assigned[point_compact == i]] = True
        comp, n_comp = ndimage.label(mask, structure=_FOUR_CONNECTED)
        comp_flat = comp.ravel()
        for ci in range(1, n_comp + 1):
            pix = np.nonzero(comp_flat == ci)[0]
            if pix.size < params.min_points:
                continue
            flat_labels[pix] = len(segments)
            segments.append(pix)
    return SegmentLabeling(labels=labels, segments=segments)


def segment_depth_image(image: DepthImage, intrinsics: CameraIntrinsics,
                        params: SegmentationParams,
                        noise: NoiseModel | None = None) -> tuple[SegmentLabeling, np.ndarray]:
    """Full segmentation of a depth image; returns labels and the 3-D cloud."""
    cloud = backproject(image, intrinsics)
    mesh = split_triangulate(cloud, params, noise)
    labeling = merge_hierarchical(mesh, params)
    return labeling, cloud


def save_labels(labeling: SegmentLabeling, path) -> None:
    """Store a label image as a 16-bit PGM (label + 1; 0 = unsegmented)."""
    if labeling.labels.max() >= 65535:
        raise ValueError("too many segments for 16-bit label storage")
    save_depth_pgm(DepthImage((labeling.labels + 1).astype(np.uint16)), path)


def load_labels(path) -> SegmentLabeling:
    """Rebuild a :class:`SegmentLabeling` from a label PGM."""
    img = load_depth_pgm(path)
    labels = img.data.astype(np.int32) - 1
    n = int(labels.max()) + 1
    flat = labels.ravel()
    segments = [np.nonzero(flat == k)[0] for k in range(n)]
    if any(s.size == 0 for s in segments):
        raise ValueError("label image has gaps in its label ids")
    return SegmentLabeling(labels=labels, segments=segments)
