"""Tests for topological-map structures, persistence, and map building."""
import json
import math

import numpy as np
import pytest

from planeloc.features import SurfaceSegmentFeature
from planeloc.geometry import Pose, compose, invert
from planeloc.mapping import (KeyframePolicy, LocalModel, ManifestRecord,
                              MapFormatError, MapVersionError, TopologicalMap,
                              build_map, load_map, read_manifest, save_map,
                              write_manifest)
from planeloc.sensor import (DEFAULT_INTRINSICS, save_depth_pgm,
                             save_intrinsics)
from planeloc.synth import CAMERA_MOUNT, corridor_world, render_depth


def make_feature(rng):
    phi = rng.normal(size=3) * 0.5
    t = rng.normal(size=3)
    sigma_q = np.abs(rng.normal(size=3)) * 1e-3 + 1e-6
    spread = np.sort(np.abs(rng.normal(size=2)) + 0.05)[::-1]
    return SurfaceSegmentFeature(pose=Pose(phi=phi, t=t), sigma_q=sigma_q,
                                 spread=spread, point_count=int(rng.integers(100, 5000)))


def make_map(rng, n_models=4):
    models = []
    for i in range(n_models):
        pose = Pose(phi=rng.normal(size=3) * 0.2, t=rng.normal(size=3) * 3)
        feats = [make_feature(rng) for _ in range(int(rng.integers(2, 6)))]
        models.append(LocalModel(model_id=i, reference_pose=pose, features=feats))
    links = [(i, i + 1, Pose(phi=rng.normal(size=3) * 0.1, t=rng.normal(size=3)))
             for i in range(n_models - 1)]
    return TopologicalMap(models=models, links=links,
                          camera_mount=Pose(phi=np.array([0.1, 0.0, -0.2]),
                                            t=np.array([0.0, 0.1, 0.3])))


def test_keyframe_policy():
    with pytest.raises(ValueError):
        KeyframePolicy(d_min=0.0)
    pol = KeyframePolicy(d_min=0.5, theta_min=math.radians(15))
    a = Pose.identity()
    assert not pol.due(a, Pose(phi=np.zeros(3), t=np.array([0.3, 0.0, 0.0])))
    assert pol.due(a, Pose(phi=np.zeros(3), t=np.array([0.6, 0.0, 0.0])))
    assert pol.due(a, Pose(phi=np.array([0.0, 0.0, math.radians(16)]), t=np.zeros(3)))


def test_map_validation():
    rng = np.random.default_rng(0)
    m0 = LocalModel(model_id=0, reference_pose=Pose.identity(), features=[])
    m1 = LocalModel(model_id=0, reference_pose=Pose.identity(), features=[])
    with pytest.raises(ValueError):
        TopologicalMap(models=[m0, m1])
    with pytest.raises(ValueError):
        TopologicalMap(models=[m0], links=[(0, 7, Pose.identity())])
    with pytest.raises(ValueError):
        LocalModel(model_id=-1, reference_pose=Pose.identity(), features=[])
    topo = make_map(rng)
    assert topo.model(2).model_id == 2
    with pytest.raises(KeyError):
        topo.model(99)


def test_neighbors_by_hop_count():
    rng = np.random.default_rng(1)
    topo = make_map(rng, n_models=5)   # chain 0-1-2-3-4
    assert topo.neighbors(2, depth=1) == {1, 3}
    assert topo.neighbors(2, depth=2) == {0, 1, 3, 4}
    assert topo.neighbors(0, depth=10) == {1, 2, 3, 4}
    assert topo.neighbors(4, depth=1) == {3}


def test_save_load_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(2)
    topo = make_map(rng)
    path = tmp_path / "map.json"
    save_map(topo, path)
    back = load_map(path)
    assert len(back.models) == len(topo.models)
    assert np.array_equal(back.camera_mount.phi, topo.camera_mount.phi)
    assert np.array_equal(back.camera_mount.t, topo.camera_mount.t)
    for ma, mb in zip(topo.models, back.models):
        assert ma.model_id == mb.model_id
        assert np.array_equal(ma.reference_pose.phi, mb.reference_pose.phi)
        assert np.array_equal(ma.reference_pose.t, mb.reference_pose.t)
        assert len(ma.features) == len(mb.features)
        for fa, fb in zip(ma.features, mb.features):
            assert np.array_equal(fa.pose.phi, fb.pose.phi)
            assert np.array_equal(fa.pose.t, fb.pose.t)
            assert np.array_equal(fa.sigma_q, fb.sigma_q)
            assert np.array_equal(fa.spread, fb.spread)
            assert fa.point_count == fb.point_count
    assert len(back.links) == len(topo.links)
    for (a, b, p), (a2, b2, p2) in zip(topo.links, back.links):
        assert (a, b) == (a2, b2)
        assert np.array_equal(p.phi, p2.phi)
        assert np.array_equal(p.t, p2.t)


def test_load_rejects_malformed_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(MapFormatError):
        load_map(bad)
    bad.write_text(json.dumps({"models": []}))
    with pytest.raises(MapFormatError):
        load_map(bad)
    bad.write_text(json.dumps({"schema": "planeloc-map/99", "models": []}))
    with pytest.raises(MapVersionError):
        load_map(bad)
    bad.write_text(json.dumps({"schema": "planeloc-map/1",
                               "models": [{"id": 0,
                                           "reference_pose": {"phi": [0, 0, 0], "t": [0, 0, 0]},
                                           "features": [{"phi": [0, 0]}]}]}))
    with pytest.raises(MapFormatError):
        load_map(bad)


def test_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    recs = []
    for i in range(5):
        gt = Pose(phi=rng.normal(size=3) * 0.1, t=rng.normal(size=3)) if i % 2 else None
        recs.append(ManifestRecord(frame_id=i, depth_path=f"frames/{i:04d}.pgm",
                                   intrinsics_path="intrinsics.json",
                                   odometry=Pose(phi=rng.normal(size=3) * 0.1,
                                                 t=rng.normal(size=3)),
                                   ground_truth=gt))
    path = tmp_path / "manifest.jsonl"
    write_manifest(recs, path)
    back = read_manifest(path)
    assert len(back) == 5
    for a, b in zip(recs, back):
        assert a.frame_id == b.frame_id
        # Relative paths resolve against the manifest's folder.
        assert b.depth_path == str(tmp_path / a.depth_path)
        assert b.intrinsics_path == str(tmp_path / a.intrinsics_path)
        assert np.array_equal(a.odometry.phi, b.odometry.phi)
        assert np.array_equal(a.odometry.t, b.odometry.t)
        assert (a.ground_truth is None) == (b.ground_truth is None)
        if a.ground_truth is not None:
            assert np.array_equal(a.ground_truth.t, b.ground_truth.t)
    # reference_pose prefers ground truth when present.
    assert back[1].reference_pose is back[1].ground_truth
    assert back[0].reference_pose is back[0].odometry


def test_manifest_rejects_bad_lines(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text('{"frame_id": 0}\n')
    with pytest.raises(MapFormatError):
        read_manifest(path)
    path.write_text("not json\n")
    with pytest.raises(MapFormatError):
        read_manifest(path)


def _world_pose(x, y, heading):
    return Pose(phi=np.array([0.0, 0.0, heading]), t=np.array([x, y, 0.0]))


def test_build_map_keyframes_and_links(tmp_path):
    world = corridor_world(seed=5)
    save_intrinsics(DEFAULT_INTRINSICS, tmp_path / "intrinsics.json")
    # Robot poses 0.2 m apart: with d_min=0.5 only every third frame keys.
    poses = [_world_pose(1.0 + 0.2 * i, 0.0, 0.0) for i in range(10)]
    recs = []
    for i, robot in enumerate(poses):
        cam = compose(robot, CAMERA_MOUNT)
        img = render_depth(world, cam, DEFAULT_INTRINSICS)
        save_depth_pgm(img, tmp_path / f"{i:04d}.pgm")
        recs.append(ManifestRecord(frame_id=i, depth_path=str(tmp_path / f"{i:04d}.pgm"),
                                   intrinsics_path=str(tmp_path / "intrinsics.json"),
                                   odometry=robot, ground_truth=robot))
    topo = build_map(recs, CAMERA_MOUNT, policy=KeyframePolicy(d_min=0.5))
    # Frames 0, 3, 6, 9 are 0.6 m apart once the first is taken.
    assert len(topo.models) == 4
    assert [m.model_id for m in topo.models] == [0, 1, 2, 3]
    assert len(topo.links) == 3
    for (a, b, rel), (ma, mb) in zip(topo.links, zip(topo.models, topo.models[1:])):
        assert (a, b) == (ma.model_id, mb.model_id)
        expect = compose(invert(ma.reference_pose), mb.reference_pose)
        assert np.allclose(rel.t, expect.t, atol=1e-12)
        assert np.allclose(rel.phi, expect.phi, atol=1e-12)
    for m in topo.models:
        assert len(m.features) >= 2
    assert np.array_equal(topo.camera_mount.phi, CAMERA_MOUNT.phi)
