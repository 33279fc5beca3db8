"""Global localization: match planar features against map models via EKF.

The camera pose relative to a local model is the state ``w = (phi, t)``:
a point in camera coordinates maps to model coordinates as
``x_m = R(phi) x_c + t``.  Each scene/model feature pair contributes an
implicit measurement - the transformed scene plane must coincide with the
model plane - processed by an iterated extended Kalman filter.  Candidate
pose hypotheses are seeded from triples of large, mutually consistent pairs
and scored by the total matched surface area (consensus).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
import json
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .accel import njit, thread_count
from .features import SurfaceSegmentFeature
from .geometry import (Pose, PoseBelief, compose, invert, relative_angle,
                       right_jacobian, skew)
from .mapping import TopologicalMap

#: 99th percentile of the chi-square distribution with 3 degrees of freedom.
CHI2_GATE_3DOF = 11.345

#: Condition-number limit on the innovation covariance.
COND_LIMIT = 1e12

#: Hypotheses are dropped when the posterior is looser than this.
MAX_ORIENT_STD = math.radians(10.0)
MAX_POSITION_STD = 0.5


class NumericalDegeneracyError(ArithmeticError):
    """Raised when the innovation covariance is too ill-conditioned to use."""


# ---------------------------------------------------------------------------
# Compiled inner loop (plain numpy when the compiled backend is disabled)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _skew3(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


@njit(cache=True)
def _rot3(phi):
    t2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    k = _skew3(phi)
    kk = k @ k
    if t2 < 1e-16:
        return np.eye(3) + k + 0.5 * kk
    theta = math.sqrt(t2)
    return np.eye(3) + (math.sin(theta) / theta) * k + ((1.0 - math.cos(theta)) / t2) * kk


@njit(cache=True)
def _rjac3(phi):
    t2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    k = _skew3(phi)
    kk = k @ k
    if t2 < 1e-16:
        return np.eye(3) - 0.5 * k + kk / 6.0
    theta = math.sqrt(t2)
    return (np.eye(3) - ((1.0 - math.cos(theta)) / t2) * k
            + ((theta - math.sin(theta)) / (t2 * theta)) * kk)


@njit(cache=True)
def _update_core(phi, t, cov, c_rot, c_t, sq, m_rot, m_t, sqp,
                 gate, cond_limit, do_update):
    """One implicit-measurement EKF step for a scene/model plane pair.

    Returns ``(h, H_w, G, d2, status, phi', t', cov')`` where ``status`` is
    0 = consistent (updated when requested), 1 = gate-rejected,
    2 = ill-conditioned innovation covariance.
    """
    rot = _rot3(phi)
    jr = _rjac3(phi)
    u = c_rot[:, 2].copy()
    ru = rot @ u
    rtb = rot.T @ (t - m_t)
    y = c_t + rtb
    c_vec = c_rot.T @ y
    m_r = m_rot.T @ rot
    a = m_rot.T @ ru
    h = np.empty(3)
    h[0] = a[0]
    h[1] = a[1]
    h[2] = u[0] * y[0] + u[1] * y[1] + u[2] * y[2]
    t1 = -(m_r @ (_skew3(u) @ jr))
    hw = np.zeros((3, 6))
    hw[0, :3] = t1[0]
    hw[1, :3] = t1[1]
    hw[2, :3] = np.cross(u, rtb) @ jr
    hw[2, 3:] = ru
    mc = m_r @ c_rot
    g = np.zeros((3, 3))
    g[0, 0] = mc[0, 0]
    g[0, 1] = mc[0, 1]
    g[1, 0] = mc[1, 0]
    g[1, 1] = mc[1, 1]
    g[2, 0] = c_vec[0]
    g[2, 1] = c_vec[1]
    g[2, 2] = 1.0
    r_meas = g @ np.diag(sq) @ g.T + np.diag(sqp)
    s = hw @ cov @ hw.T + r_meas
    phi_new = phi.copy()
    t_new = t.copy()
    cov_new = cov.copy()
    ev = np.linalg.eigvalsh(s)
    status = 0
    d2 = np.inf
    if ev[0] <= 0.0 or ev[2] > cond_limit * ev[0]:
        status = 2
    else:
        sol = np.linalg.solve(s, h)
        d2 = h[0] * sol[0] + h[1] * sol[1] + h[2] * sol[2]
        if d2 > gate:
            status = 1
        elif do_update:
            gain = cov @ hw.T @ np.linalg.inv(s)
            delta = gain @ h
            for i in range(3):
                phi_new[i] = phi[i] - delta[i]
                t_new[i] = t[i] - delta[3 + i]
            ikh = np.eye(6) - gain @ hw
            cn = ikh @ cov @ ikh.T + gain @ r_meas @ gain.T
            cov_new = 0.5 * (cn + cn.T)
    return h, hw, g, d2, status, phi_new, t_new, cov_new


def _feature_arrays(f: SurfaceSegmentFeature) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.ascontiguousarray(f.pose.rotation),
            np.ascontiguousarray(f.pose.t),
            np.ascontiguousarray(f.sigma_q))


# ---------------------------------------------------------------------------
# Plane transforms and measurement model (reference numpy path)
# ---------------------------------------------------------------------------

def transform_plane(scene: SurfaceSegmentFeature, w: Pose) -> tuple[np.ndarray, float]:
    """Map the scene feature's nominal plane into model coordinates under w."""
    n_c = scene.normal
    n_m = w.rotation @ n_c
    rho_c = float(n_c @ scene.pose.t)
    return n_m, rho_c + float(n_m @ w.t)


def plane_residual(scene: SurfaceSegmentFeature, model: SurfaceSegmentFeature,
                   w: Pose, q_scene=(0.0, 0.0, 0.0),
                   q_model=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Full nonlinear coincidence residual of a disturbed feature pair.

    The scene plane, disturbed by ``q_scene = (s_x, s_y, r)`` in its feature
    frame, is transformed by ``w`` and expressed in the model feature frame;
    the result is compared against the model plane disturbed by ``q_model``.
    The residual stacks the two tangential normal components and the offset
    difference, and vanishes exactly when the planes coincide.
    """
    sx, sy, r = (float(v) for v in q_scene)
    n_f = np.array([sx, sy, 1.0]) / math.sqrt(sx * sx + sy * sy + 1.0)
    n_c = scene.pose.rotation @ n_f
    rho_c = r + float(n_c @ scene.pose.t)
    n_m = w.rotation @ n_c
    rho_m = rho_c + float(n_m @ w.t)
    a = model.pose.rotation.T @ n_m
    rho_f = rho_m - float(n_m @ model.pose.t)
    sxp, syp, rp = (float(v) for v in q_model)
    n_fp = np.array([sxp, syp, 1.0]) / math.sqrt(sxp * sxp + syp * syp + 1.0)
    return np.array([a[0] - n_fp[0], a[1] - n_fp[1], rho_f - rp])


def coplanarity_residual(scene: SurfaceSegmentFeature, model: SurfaceSegmentFeature,
                         w: Pose) -> np.ndarray:
    """Residual of the nominal (undisturbed) planes under pose ``w``."""
    return plane_residual(scene, model, w)


def measurement_jacobians(scene: SurfaceSegmentFeature, model: SurfaceSegmentFeature,
                          w: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Residual and its Jacobians w.r.t. state, scene and model disturbances.

    Returns ``(h, H_w, G, G')`` evaluated at zero disturbances: ``H_w`` is
    3x6 (orientation block first), ``G`` is the 3x3 sensitivity to the scene
    disturbance and ``G'`` the one to the model disturbance (exactly -I).
    """
    c_rot, c_t, sq = _feature_arrays(scene)
    m_rot, m_t, sqp = _feature_arrays(model)
    h, hw, g, _, _, _, _, _ = _update_core(
        np.ascontiguousarray(w.phi), np.ascontiguousarray(w.t), np.zeros((6, 6)),
        c_rot, c_t, sq, m_rot, m_t, sqp, np.inf, COND_LIMIT, False)
    return h, hw, g, -np.eye(3)


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchPrior:
    """Robot-level pose uncertainty relative to a model's keyframe.

    The robot is assumed to stand somewhere near the keyframe position with
    roughly the keyframe heading, on the same floor: heading within
    ``sigma_heading``, position within ``sigma_position`` in the plane, and a
    floor-contact tolerance ``sigma_floor`` that also bounds tilt through the
    ``wheelbase`` lever arm.
    """

    sigma_heading: float = math.radians(20.0)
    sigma_position: float = 1.0
    sigma_floor: float = 0.005
    wheelbase: float = 0.33

    def __post_init__(self) -> None:
        for name in ("sigma_heading", "sigma_position", "sigma_floor", "wheelbase"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")


def camera_prior(prior: MatchPrior, mount: Pose) -> PoseBelief:
    """Initial belief over the camera-to-model pose implied by a robot prior.

    The robot-level uncertainty (z-up frame: tilt about x/y, heading about z,
    planar position, floor height) is conjugated by the camera mount, since
    both the query camera and the model keyframe camera sit on identically
    mounted robots.
    """
    sigma_tilt = 2.0 * prior.sigma_floor / prior.wheelbase
    cov_robot = np.diag([sigma_tilt ** 2, sigma_tilt ** 2, prior.sigma_heading ** 2,
                         prior.sigma_position ** 2, prior.sigma_position ** 2,
                         prior.sigma_floor ** 2])
    rot_m = mount.rotation
    jac = np.zeros((6, 6))
    jac[:3, :3] = rot_m.T
    jac[3:, :3] = -rot_m.T @ skew(mount.t)
    jac[3:, 3:] = rot_m.T
    return PoseBelief(mean=Pose.identity(), cov=jac @ cov_robot @ jac.T)


# ---------------------------------------------------------------------------
# Single EKF update
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EkfUpdate:
    belief: PoseBelief
    accepted: bool
    distance: float


def ekf_update(belief: PoseBelief, scene: SurfaceSegmentFeature,
               model: SurfaceSegmentFeature,
               gate: float = CHI2_GATE_3DOF) -> EkfUpdate:
    """Fold one plane pair into the pose belief.

    The pair is first validated with a chi-square gate on the coincidence
    residual; rejected pairs leave the belief untouched.  The covariance
    update uses the symmetric (Joseph) form.  Raises
    :class:`NumericalDegeneracyError` when the innovation covariance's
    condition number exceeds :data:`COND_LIMIT`.
    """
    c_rot, c_t, sq = _feature_arrays(scene)
    m_rot, m_t, sqp = _feature_arrays(model)
    _, _, _, d2, status, phi, t, cov = _update_core(
        np.ascontiguousarray(belief.mean.phi), np.ascontiguousarray(belief.mean.t),
        np.ascontiguousarray(belief.cov), c_rot, c_t, sq, m_rot, m_t, sqp,
        float(gate), COND_LIMIT, True)
    if status == 2:
        raise NumericalDegeneracyError(
            "innovation covariance is numerically degenerate for this pair")
    if status == 1:
        return EkfUpdate(belief=belief, accepted=False, distance=float(d2))
    return EkfUpdate(belief=PoseBelief(mean=Pose(phi=phi, t=t), cov=cov),
                     accepted=True, distance=float(d2))


# ---------------------------------------------------------------------------
# Pair matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchPair:
    """A gated scene/model feature correspondence candidate."""

    scene_index: int
    model_index: int
    weight: float
    overlap: float
    distance: float


def _overlap_score(scene: SurfaceSegmentFeature, model: SurfaceSegmentFeature,
                   belief: PoseBelief) -> float:
    """Spatial overlap of the two patches under a belief, as exp(-d^2/2).

    The scene centroid is carried into model coordinates by the belief mean
    and compared with the model centroid inside the model plane; the
    Mahalanobis distance combines both patches' in-plane extents with the
    positional uncertainty the belief induces on the transported centroid.
    """
    rot = belief.mean.rotation
    c_s = rot @ scene.pose.t + belief.mean.t
    delta = c_s - model.pose.t
    axes = model.pose.rotation[:, :2]
    d2d = axes.T @ delta
    jac = np.zeros((3, 6))
    jac[:, :3] = -rot @ skew(scene.pose.t) @ _rjac3(np.ascontiguousarray(belief.mean.phi))
    jac[:, 3:] = np.eye(3)
    cov_c = jac @ belief.cov @ jac.T
    cov2 = axes.T @ cov_c @ axes + np.diag(scene.spread + model.spread)
    try:
        sol = np.linalg.solve(cov2, d2d)
    except np.linalg.LinAlgError:
        return 0.0
    d2 = float(d2d @ sol)
    return math.exp(-0.5 * d2)


@dataclass(frozen=True)
class _FeatureStack:
    """Per-feature arrays stacked once so gating tables stay vectorized."""

    t: np.ndarray        # (n, 3) centroids
    axes: np.ndarray     # (n, 3, 2) in-plane axes
    spread: np.ndarray   # (n, 2) in-plane variances
    skew_t: np.ndarray   # (n, 3, 3) cross-product matrices of the centroids


def _stack_features(features: list) -> _FeatureStack:
    t = np.stack([f.pose.t for f in features])
    axes = np.stack([f.pose.rotation[:, :2] for f in features])
    spread = np.stack([f.spread for f in features])
    sk = np.zeros((len(features), 3, 3))
    sk[:, 0, 1] = -t[:, 2]
    sk[:, 0, 2] = t[:, 1]
    sk[:, 1, 0] = t[:, 2]
    sk[:, 1, 2] = -t[:, 0]
    sk[:, 2, 0] = -t[:, 1]
    sk[:, 2, 1] = t[:, 0]
    return _FeatureStack(t=t, axes=axes, spread=spread, skew_t=sk)


def _overlap_table(scene: _FeatureStack, model: _FeatureStack,
                   belief: PoseBelief) -> np.ndarray:
    """Overlap scores for every scene/model pairing at one belief.

    Vectorized equivalent of calling :func:`_overlap_score` on the full
    grid; one table per belief keeps the candidate gating off the Python
    hot path.  Returns an ``(n_scene, n_model)`` array of ``exp(-d^2/2)``.
    """
    rot = belief.mean.rotation
    jr = right_jacobian(belief.mean.phi)
    delta = scene.t @ rot.T + belief.mean.t - model.t[:, None, :]   # M,S,3
    d2d = np.einsum('mke,msk->mse', model.axes, delta)              # M,S,2
    b = -np.einsum('ab,sbc,cd->sad', rot, scene.skew_t, jr)         # S,3,3
    cov = belief.cov
    cross = np.einsum('sab,bc->sac', b, cov[:3, 3:])
    cov_c = (np.einsum('sab,bc,sdc->sad', b, cov[:3, :3], b)
             + cross + cross.transpose(0, 2, 1) + cov[3:, 3:])       # S,3,3
    cov2 = np.einsum('mka,skl,mlb->msab', model.axes, cov_c, model.axes)
    cov2[..., 0, 0] += (scene.spread[:, 0] + model.spread[:, None, 0])
    cov2[..., 1, 1] += (scene.spread[:, 1] + model.spread[:, None, 1])
    det = cov2[..., 0, 0] * cov2[..., 1, 1] - cov2[..., 0, 1] * cov2[..., 1, 0]
    bad = ~(det > 0.0)
    safe = np.where(bad, 1.0, det)
    x = (cov2[..., 1, 1] * d2d[..., 0] - cov2[..., 0, 1] * d2d[..., 1]) / safe
    y = (cov2[..., 0, 0] * d2d[..., 1] - cov2[..., 1, 0] * d2d[..., 0]) / safe
    d2 = d2d[..., 0] * x + d2d[..., 1] * y
    table = np.exp(-0.5 * np.maximum(d2, 0.0))
    table[bad] = 0.0
    return table.T


def initial_match(scene_features: list, model_features: list, belief: PoseBelief,
                  gate: float = CHI2_GATE_3DOF,
                  min_overlap: float = 0.05) -> list:
    """Enumerate plausible feature pairs under the prior belief.

    A pair survives when its coincidence residual passes the chi-square gate
    under the prior uncertainty and the patches plausibly overlap in space.
    Pairs are returned sorted by decreasing weight (the smaller of the two
    elliptical areas), so large mutually visible surfaces come first.
    """
    phi = np.ascontiguousarray(belief.mean.phi)
    t = np.ascontiguousarray(belief.mean.t)
    cov = np.ascontiguousarray(belief.cov)
    sc = [_feature_arrays(f) for f in scene_features]
    mf = [_feature_arrays(f) for f in model_features]
    overlaps = _overlap_table(_stack_features(scene_features),
                              _stack_features(model_features), belief)
    pairs = []
    for i, scene in enumerate(scene_features):
        c_rot, c_t, sq = sc[i]
        area_s = scene.ellipse_area()
        for j, model in enumerate(model_features):
            if overlaps[i, j] < min_overlap:
                continue
            m_rot, m_t, sqp = mf[j]
            _, _, _, d2, status, _, _, _ = _update_core(
                phi, t, cov, c_rot, c_t, sq, m_rot, m_t, sqp,
                float(gate), COND_LIMIT, False)
            if status != 0:
                continue
            pairs.append(MatchPair(scene_index=i, model_index=j,
                                   weight=min(area_s, model.ellipse_area()),
                                   overlap=float(overlaps[i, j]), distance=float(d2)))
    pairs.sort(key=lambda p: (-p.weight, p.scene_index, p.model_index))
    return pairs


# ---------------------------------------------------------------------------
# Hypothesis generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoseHypothesis:
    """One candidate camera-to-model registration with its support."""

    model_id: int
    belief: PoseBelief
    consensus: float
    n_pairs: int


def _refine_seed(prior: PoseBelief, seed_pairs: list, scene_arr: list,
                 model_arr: list, gate: float, passes: int = 5) -> PoseBelief | None:
    """Iterated EKF over a seed pair sequence.

    Each pass relinearizes: it restarts from the prior covariance at the
    current mean estimate and runs the full update sequence.  Intermediate
    passes only carry the mean forward (reducing linearization error); the
    final pass must accept every pair and yields the posterior belief.
    Convergence is quadratic; five passes reach machine precision from
    offsets of 0.3 m / 10 degrees.
    """
    prior_phi = np.ascontiguousarray(prior.mean.phi)
    prior_t = np.ascontiguousarray(prior.mean.t)
    prior_cov = np.ascontiguousarray(prior.cov)
    mean_phi, mean_t = prior_phi, prior_t
    phi, t, cov = mean_phi, mean_t, prior_cov
    for p in range(passes):
        phi, t, cov = mean_phi, mean_t, prior_cov
        final = p == passes - 1
        for pair in seed_pairs:
            c_rot, c_t, sq = scene_arr[pair.scene_index]
            m_rot, m_t, sqp = model_arr[pair.model_index]
            _, _, _, _, status, phi, t, cov = _update_core(
                phi, t, cov, c_rot, c_t, sq, m_rot, m_t, sqp,
                float(gate), COND_LIMIT, True)
            if status == 2 or (status == 1 and final):
                return None
        mean_phi, mean_t = phi, t
    return PoseBelief(mean=Pose(phi=phi, t=t), cov=cov)


def _score_alignment(pairs: list, scene_arr: list, model_arr: list,
                     belief: PoseBelief, overlaps: np.ndarray,
                     gate: float, min_overlap: float) -> tuple[float, int]:
    """Consensus of a refined pose: best one-to-one matched area.

    Every candidate pair is re-gated at the posterior belief - the plane
    coincidence residual must pass the chi-square gate and the patches must
    still overlap spatially - and the surviving pairs are assigned one-to-one
    so that the total matched area is maximal.  Scoring at a fixed pose makes
    the consensus independent of the order in which the filter happened to
    consume the pairs.
    """
    phi = np.ascontiguousarray(belief.mean.phi)
    t = np.ascontiguousarray(belief.mean.t)
    cov = np.ascontiguousarray(belief.cov)
    feasible = []
    for pair in pairs:
        if overlaps[pair.scene_index, pair.model_index] < min_overlap:
            continue
        c_rot, c_t, sq = scene_arr[pair.scene_index]
        m_rot, m_t, sqp = model_arr[pair.model_index]
        _, _, _, _, status, _, _, _ = _update_core(
            phi, t, cov, c_rot, c_t, sq, m_rot, m_t, sqp,
            float(gate), COND_LIMIT, False)
        if status != 0:
            continue
        feasible.append(pair)
    if not feasible:
        return 0.0, 0
    si = {s: k for k, s in enumerate(sorted({p.scene_index for p in feasible}))}
    mi = {m: k for k, m in enumerate(sorted({p.model_index for p in feasible}))}
    table = np.zeros((len(si), len(mi)))
    for p in feasible:
        table[si[p.scene_index], mi[p.model_index]] = p.weight
    rows, cols = linear_sum_assignment(table, maximize=True)
    chosen = table[rows, cols]
    return float(chosen.sum()), int(np.count_nonzero(chosen > 0.0))


def generate_hypotheses(scene_features: list, model_features: list,
                        prior: PoseBelief, gate: float = CHI2_GATE_3DOF,
                        min_overlap: float = 0.05,
                        min_normal_spread: float = 0.1,
                        max_hypotheses: int = 64,
                        seed_pool: int = 12) -> list:
    """Generate pose hypotheses for one local model.

    Seed triples of high-weight pairs are required to be one-to-one and to
    span three sufficiently independent model normals (smallest singular
    value of the stacked unit normals at least ``min_normal_spread``); each
    seed is refined by an iterated EKF, extended greedily with the remaining
    compatible pairs, rescored at the final pose by the best one-to-one
    matched area, and filtered for posterior degeneracy.  Near-identical
    poses are merged, keeping the strongest.  Returns hypotheses as
    ``model_id = -1``; callers attach ids.
    """
    pairs = initial_match(scene_features, model_features, prior,
                          gate=gate, min_overlap=min_overlap)
    if len(pairs) < 3:
        return []
    scene_arr = [_feature_arrays(f) for f in scene_features]
    model_arr = [_feature_arrays(f) for f in model_features]
    scene_stack = _stack_features(scene_features)
    model_stack = _stack_features(model_features)

    pool = pairs[:seed_pool]
    seeds = []
    for c in combinations(range(len(pool)), 3):
        trio = [pool[k] for k in c]
        if len({p.scene_index for p in trio}) < 3:
            continue
        if len({p.model_index for p in trio}) < 3:
            continue
        normals = np.column_stack([model_arr[p.model_index][0][:, 2] for p in trio])
        sv = np.linalg.svd(normals, compute_uv=False)
        if sv[-1] < min_normal_spread:
            continue
        seeds.append(trio)
        if len(seeds) >= max_hypotheses:
            break

    hypotheses: list[PoseHypothesis] = []
    seed_means: list[Pose] = []
    for trio in seeds:
        belief = _refine_seed(prior, trio, scene_arr, model_arr, gate)
        if belief is None:
            continue
        if any(float(np.linalg.norm(m.t - belief.mean.t)) <= 0.05
               and relative_angle(m, belief.mean) <= math.radians(0.5)
               for m in seed_means):
            continue
        seed_means.append(belief.mean)
        used_scene = {p.scene_index for p in trio}
        used_model = {p.model_index for p in trio}
        overlaps = _overlap_table(scene_stack, model_stack, belief)
        phi = np.ascontiguousarray(belief.mean.phi)
        t = np.ascontiguousarray(belief.mean.t)
        cov = np.ascontiguousarray(belief.cov)
        for pair in pairs:
            if pair.scene_index in used_scene or pair.model_index in used_model:
                continue
            if overlaps[pair.scene_index, pair.model_index] < min_overlap:
                continue
            c_rot, c_t, sq = scene_arr[pair.scene_index]
            m_rot, m_t, sqp = model_arr[pair.model_index]
            _, _, _, _, status, phi_n, t_n, cov_n = _update_core(
                phi, t, cov, c_rot, c_t, sq, m_rot, m_t, sqp,
                float(gate), COND_LIMIT, True)
            if status != 0:
                continue
            phi, t, cov = phi_n, t_n, cov_n
            used_scene.add(pair.scene_index)
            used_model.add(pair.model_index)
        cov = np.ascontiguousarray(cov)
        orient_std = math.sqrt(max(float(np.linalg.eigvalsh(cov[:3, :3])[-1]), 0.0))
        pos_std = math.sqrt(max(float(np.linalg.eigvalsh(cov[3:, 3:])[-1]), 0.0))
        if orient_std > MAX_ORIENT_STD or pos_std > MAX_POSITION_STD:
            continue
        final = PoseBelief(mean=Pose(phi=phi, t=t), cov=cov)
        overlaps = _overlap_table(scene_stack, model_stack, final)
        consensus, n_pairs = _score_alignment(pairs, scene_arr, model_arr,
                                              final, overlaps, gate, min_overlap)
        if n_pairs < 3:
            continue
        cand = PoseHypothesis(model_id=-1, belief=final,
                              consensus=consensus, n_pairs=n_pairs)
        merged = False
        for k, kept in enumerate(hypotheses):
            if (float(np.linalg.norm(kept.belief.mean.t - cand.belief.mean.t)) <= 0.05
                    and relative_angle(kept.belief.mean, cand.belief.mean) <= math.radians(0.5)):
                if cand.consensus > kept.consensus:
                    hypotheses[k] = cand
                merged = True
                break
        if not merged:
            hypotheses.append(cand)
    hypotheses.sort(key=lambda h: (-h.consensus, float(np.trace(h.belief.cov))))
    return hypotheses


# ---------------------------------------------------------------------------
# Whole-map localization
# ---------------------------------------------------------------------------

def localize(scene_features: list, topo_map: TopologicalMap,
             prior: MatchPrior | None = None, gate: float = CHI2_GATE_3DOF,
             max_hypotheses: int = 64,
             workers: int | None = None) -> list:
    """Rank registration hypotheses of a scene against every local model.

    Returns :class:`PoseHypothesis` instances sorted by decreasing consensus
    (posterior covariance trace and model id break ties).  ``workers``
    overrides the ``PLANELOC_THREADS`` environment variable; results do not
    depend on the worker count.
    """
    prior = prior or MatchPrior()
    belief = camera_prior(prior, topo_map.camera_mount)
    if workers is None:
        workers = thread_count()

    def per_model(model):
        hyps = generate_hypotheses(scene_features, model.features, belief,
                                   gate=gate, max_hypotheses=max_hypotheses)
        return [PoseHypothesis(model_id=model.model_id, belief=h.belief,
                               consensus=h.consensus, n_pairs=h.n_pairs)
                for h in hyps]

    if workers > 1 and len(topo_map.models) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(per_model, topo_map.models))
    else:
        chunks = [per_model(m) for m in topo_map.models]
    out = [h for chunk in chunks for h in chunk]
    out.sort(key=lambda h: (-h.consensus, float(np.trace(h.belief.cov)), h.model_id))
    return out


def world_pose(hypothesis: PoseHypothesis, topo_map: TopologicalMap) -> Pose:
    """Estimated robot world pose implied by a hypothesis.

    Composes the model's reference robot pose with the estimated camera-to-
    model transform, mapping back through the camera mount on both sides.
    """
    model = topo_map.model(hypothesis.model_id)
    mount = topo_map.camera_mount
    cam_world = compose(compose(model.reference_pose, mount), hypothesis.belief.mean)
    return compose(cam_world, invert(mount))


# ---------------------------------------------------------------------------
# Hypothesis serialization (CLI output)
# ---------------------------------------------------------------------------

def save_hypotheses(hypotheses: list, path) -> None:
    docs = [{"model_id": h.model_id,
             "phi": [float(x) for x in h.belief.mean.phi],
             "t": [float(x) for x in h.belief.mean.t],
             "cov": [float(x) for x in h.belief.cov.ravel()],
             "consensus": float(h.consensus),
             "n_pairs": int(h.n_pairs)} for h in hypotheses]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(docs, fh, indent=1)
        fh.write("\n")


def load_hypotheses(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        docs = json.load(fh)
    out = []
    for i, doc in enumerate(docs):
        try:
            belief = PoseBelief(mean=Pose(phi=np.asarray(doc["phi"], dtype=np.float64),
                                          t=np.asarray(doc["t"], dtype=np.float64)),
                                cov=np.asarray(doc["cov"], dtype=np.float64).reshape(6, 6))
            out.append(PoseHypothesis(model_id=int(doc["model_id"]), belief=belief,
                                      consensus=float(doc["consensus"]),
                                      n_pairs=int(doc["n_pairs"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: invalid hypothesis record {i}: {exc}") from exc
    return out
