"""Tests for depth images, back-projection, and the point noise model."""
import numpy as np
import pytest

from planeloc.sensor import (DEFAULT_INTRINSICS, CameraIntrinsics, DepthImage,
                             NoiseModel, backproject, load_depth_pgm,
                             load_intrinsics, point_covariance, save_depth_pgm,
                             save_intrinsics)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1.0, fy=500.0, cx=160.0, cy=120.0, width=320, height=240)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=500.0, fy=500.0, cx=400.0, cy=120.0, width=320, height=240)
    assert DEFAULT_INTRINSICS.f_mean == 262.5


def test_depth_image_validation():
    img = DepthImage(np.zeros((4, 6), dtype=np.uint16))
    assert img.height == 4 and img.width == 6
    # Int arrays within range are converted.
    img2 = DepthImage(np.full((2, 2), 1500))
    assert img2.data.dtype == np.uint16
    with pytest.raises(ValueError):
        DepthImage(np.zeros(5, dtype=np.uint16))
    with pytest.raises(ValueError):
        DepthImage(np.full((2, 2), 70000))


def test_backproject_known_pixels():
    K = DEFAULT_INTRINSICS
    data = np.zeros((K.height, K.width), dtype=np.uint16)
    data[120, 160] = 2000   # at the principal point, 2 m
    data[120, 260] = 1000   # 100 px right of center, 1 m
    data[20, 160] = 500     # 100 px above center, 0.5 m
    cloud = backproject(DepthImage(data), K)
    assert np.allclose(cloud[120, 160], [0.0, 0.0, 2.0])
    assert np.allclose(cloud[120, 260], [100.0 / 262.5, 0.0, 1.0])
    assert np.allclose(cloud[20, 160], [0.0, -100.0 / 262.5 * 0.5, 0.5])
    # Invalid pixels become NaN.
    assert np.isnan(cloud[0, 0]).all()
    assert np.isfinite(cloud[120, 160]).all()


def test_backproject_rejects_size_mismatch():
    K = DEFAULT_INTRINSICS
    with pytest.raises(ValueError):
        backproject(DepthImage(np.zeros((10, 10), dtype=np.uint16)), K)


def test_noise_model_sigma_z_quadratic():
    nm = NoiseModel(sigma_px=0.5, k_z=2.85e-3)
    assert abs(nm.sigma_z(1.0) - 2.85e-3) < 1e-15
    assert abs(nm.sigma_z(2.0) - 4.0 * 2.85e-3) < 1e-15
    assert abs(nm.sigma_z(3.0) - 9.0 * 2.85e-3) < 1e-15
    with pytest.raises(ValueError):
        NoiseModel(sigma_px=-0.1)


def test_point_covariance_structure():
    K = DEFAULT_INTRINSICS
    nm = NoiseModel(sigma_px=0.5, k_z=2.85e-3)
    # On-axis point: covariance is diagonal with lateral and axial variances.
    z = 2.0
    C = point_covariance([0.0, 0.0, z], K, nm)
    s_lat = nm.sigma_px * z / K.f_mean
    s_ax = nm.k_z * z * z
    assert np.allclose(C, np.diag([s_lat**2, s_lat**2, s_ax**2]), atol=1e-18)
    # Off-axis: the axial variance sits along the viewing ray.
    rng = np.random.default_rng(8)
    for _ in range(50):
        p = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 4.0)])
        C = point_covariance(p, K, nm)
        assert np.allclose(C, C.T)
        ray = p / np.linalg.norm(p)
        z = p[2]
        var_along_ray = float(ray @ C @ ray)
        assert abs(var_along_ray - (nm.k_z * z * z) ** 2) < 1e-15
        evals = np.linalg.eigvalsh(C)
        assert evals.min() > 0.0
        # Two equal lateral eigenvalues.
        assert abs(evals[0] - evals[1]) < 1e-18 or abs(evals[1] - evals[2]) < 1e-18
    with pytest.raises(ValueError):
        point_covariance([0.0, 0.0, -1.0], K, nm)


def test_depth_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    data = rng.integers(0, 65536, size=(24, 32), dtype=np.uint16)
    data[0, :] = 0
    img = DepthImage(data)
    path = tmp_path / "depth.pgm"
    save_depth_pgm(img, path)
    back = load_depth_pgm(path)
    assert np.array_equal(back.data, data)
    # Header is plain P5 with 16-bit maxval.
    head = path.read_bytes()[:20]
    assert head.startswith(b"P5\n32 24\n65535\n")


def test_depth_pgm_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(ValueError):
        load_depth_pgm(p)
    p2 = tmp_path / "bad2.pgm"
    p2.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(ValueError):
        load_depth_pgm(p2)
    p3 = tmp_path / "short.pgm"
    p3.write_bytes(b"P5\n4 4\n65535\n" + bytes(6))
    with pytest.raises(ValueError):
        load_depth_pgm(p3)


def test_intrinsics_round_trip(tmp_path):
    path = tmp_path / "K.json"
    save_intrinsics(DEFAULT_INTRINSICS, path)
    K = load_intrinsics(path)
    assert K == DEFAULT_INTRINSICS
    path.write_text("{not json")
    with pytest.raises(ValueError):
        load_intrinsics(path)
    path.write_text('{"fx": 1.0}')
    with pytest.raises(ValueError):
        load_intrinsics(path)
