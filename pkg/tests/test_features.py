"""Tests for planar feature extraction and its uncertainty model."""
import math

import numpy as np
import pytest

from planeloc.features import (MIN_OFFSET_VAR, DegenerateSegmentError,
                               PlaneFit, SurfaceSegmentFeature, build_feature,
                               features_from_segments, fit_plane,
                               perturbed_normal)
from planeloc.geometry import Pose, rotation_from_vector
from planeloc.sensor import DEFAULT_INTRINSICS, NoiseModel, point_covariance


def grid_points(rng=None, nx=20, ny=15, extent=(0.6, 0.4)):
    """Regular grid in the local plane z=0, as (N, 3)."""
    x = np.linspace(-extent[0], extent[0], nx)
    y = np.linspace(-extent[1], extent[1], ny)
    xx, yy = np.meshgrid(x, y)
    return np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])


def place(points, rot, t):
    return points @ rot.T + np.asarray(t)


def test_fit_plane_exact():
    rng = np.random.default_rng(13)
    base = grid_points()
    for _ in range(50):
        rot = rotation_from_vector(rng.normal(size=3))
        t = rng.uniform(-1.0, 1.0, size=3) + [0.0, 0.0, 3.0]
        pts = place(base, rot, t)
        fit = fit_plane(pts)
        assert np.abs(fit.centroid - t).max() < 1e-9
        # Normal matches the construction up to sign.
        n = fit.axes[:, 2]
        assert min(np.abs(n - rot[:, 2]).max(), np.abs(n + rot[:, 2]).max()) < 1e-7
        # rms is the sqrt of an eigenvalue at machine epsilon, so ~1e-8.
        assert fit.rms < 1e-7
        # Moments are the grid's second moments (x has the larger extent).
        mx = np.mean(base[:, 0] ** 2)
        my = np.mean(base[:, 1] ** 2)
        assert abs(fit.moments[0] - mx) < 1e-12
        assert abs(fit.moments[1] - my) < 1e-12


def test_fit_plane_rms_of_noisy_points():
    rng = np.random.default_rng(14)
    base = grid_points()
    noise = 0.01 * rng.standard_normal(base.shape[0])
    pts = base + np.outer(noise, [0.0, 0.0, 1.0])
    fit = fit_plane(pts)
    assert abs(fit.rms - np.std(noise)) < 2e-3


def test_fit_plane_degenerate_inputs():
    with pytest.raises(DegenerateSegmentError):
        fit_plane(np.zeros((2, 3)))
    line = np.outer(np.linspace(0, 1, 30), [1.0, 2.0, 0.5])
    with pytest.raises(DegenerateSegmentError):
        fit_plane(line)
    with pytest.raises(ValueError):
        fit_plane(np.full((10, 3), np.nan))
    with pytest.raises(ValueError):
        fit_plane(np.zeros((10, 2)))


def test_build_feature_frame_conventions():
    nm = NoiseModel()
    rng = np.random.default_rng(15)
    base = grid_points()
    for _ in range(50):
        rot = rotation_from_vector(rng.normal(size=3) * 0.6)
        t = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(1.0, 4.0)])
        feat = build_feature(place(base, rot, t), DEFAULT_INTRINSICS, nm)
        # Normal faces the camera: n . centroid < 0.
        assert float(feat.normal @ feat.pose.t) < 0.0
        assert abs(feat.offset - float(feat.normal @ feat.pose.t)) < 1e-12
        # Frame is right-handed and orthonormal.
        R = feat.pose.rotation
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) > 0.0
        # The feature plane passes through the points.
        assert feat.spread[0] >= feat.spread[1] > 0.0
        assert feat.point_count == base.shape[0]


def test_build_feature_offset_variance_matches_sensor_model():
    # For a frontal patch at depth z the offset variance must equal the
    # axial point variance of the centroid (normal parallel to the ray).
    nm = NoiseModel(sigma_px=0.5, k_z=2.85e-3)
    base = grid_points()
    for z in [1.0, 2.0, 3.0]:
        pts = base + [0.0, 0.0, z]
        feat = build_feature(pts, DEFAULT_INTRINSICS, nm)
        n = feat.normal
        expected = float(n @ point_covariance(feat.pose.t, DEFAULT_INTRINSICS, nm) @ n)
        assert abs(feat.sigma_q[2] - expected) < 1e-15
        assert abs(feat.sigma_q[2] - (nm.k_z * z * z) ** 2) < 1e-10


def test_build_feature_slope_variance_shrinks_with_extent():
    nm = NoiseModel()
    small = grid_points(extent=(0.1, 0.08)) + [0.0, 0.0, 2.0]
    large = grid_points(extent=(0.8, 0.6)) + [0.0, 0.0, 2.0]
    f_small = build_feature(small, DEFAULT_INTRINSICS, nm)
    f_large = build_feature(large, DEFAULT_INTRINSICS, nm)
    assert f_large.sigma_q[0] < f_small.sigma_q[0]
    assert f_large.sigma_q[1] < f_small.sigma_q[1]
    # Slope variance formula: var_r / (lambda + var_r), per in-plane axis.
    var_r = f_large.sigma_q[2]
    lam1, lam2 = f_large.spread
    assert abs(f_large.sigma_q[0] - var_r / (lam1 + var_r)) < 1e-15
    assert abs(f_large.sigma_q[1] - var_r / (lam2 + var_r)) < 1e-15


def test_build_feature_offset_variance_floor():
    # Noise-free model: variance is floored, not zero.
    nm = NoiseModel(sigma_px=0.0, k_z=0.0)
    feat = build_feature(grid_points() + [0.0, 0.0, 2.0], DEFAULT_INTRINSICS, nm)
    assert feat.sigma_q[2] == MIN_OFFSET_VAR


def test_ellipse_area():
    pose = Pose(np.zeros(3), np.array([0.0, 0.0, -2.0]))
    feat = SurfaceSegmentFeature(pose=pose, sigma_q=np.array([1e-4, 1e-4, 1e-6]),
                                 spread=np.array([0.04, 0.01]), point_count=100)
    assert abs(feat.ellipse_area() - math.pi * 0.02) < 1e-15


def test_perturbed_normal():
    assert np.allclose(perturbed_normal(0.0, 0.0), [0.0, 0.0, 1.0])
    n = perturbed_normal(0.3, -0.4)
    assert abs(np.linalg.norm(n) - 1.0) < 1e-15
    assert np.allclose(n * math.sqrt(1.25), [0.3, -0.4, 1.0])


def test_feature_validation():
    pose = Pose(np.zeros(3), np.array([0.0, 0.0, -1.0]))
    good = dict(pose=pose, sigma_q=np.array([1e-4, 1e-4, 1e-6]),
                spread=np.array([0.1, 0.05]), point_count=10)
    SurfaceSegmentFeature(**good)
    with pytest.raises(ValueError):
        SurfaceSegmentFeature(**{**good, "sigma_q": np.array([0.0, 1e-4, 1e-6])})
    with pytest.raises(ValueError):
        SurfaceSegmentFeature(**{**good, "spread": np.array([0.05, 0.1])})
    with pytest.raises(ValueError):
        SurfaceSegmentFeature(**{**good, "point_count": 2})


def test_features_from_segments_skips_degenerate():
    nm = NoiseModel()
    K = DEFAULT_INTRINSICS
    cloud = np.full((K.height, K.width, 3), np.nan)
    # A valid frontal patch in the upper-left corner.
    base = grid_points(nx=10, ny=10, extent=(0.2, 0.2)) + [0.0, 0.0, 2.0]
    rows, cols = np.divmod(np.arange(100), 10)
    cloud[rows, cols] = base
    flat_valid = rows * K.width + cols
    # A degenerate (collinear) segment elsewhere.
    cloud[50, 0:30] = np.outer(np.linspace(1, 2, 30), [0.0, 0.0, 1.0])
    flat_line = 50 * K.width + np.arange(30)
    feats = features_from_segments(cloud, [flat_valid, flat_line], K, nm)
    assert len(feats) == 1
    assert feats[0].point_count == 100
