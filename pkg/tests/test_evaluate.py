"""Tests for the ground-truth evaluation harness."""
import csv
import json
import math

import numpy as np
import pytest

from planeloc.evaluate import (CorrectnessCriterion, EvalRecord, _summarize,
                               evaluate, is_correct, save_report)
from planeloc.geometry import Pose, compose
from planeloc.mapping import KeyframePolicy, ManifestRecord, build_map
from planeloc.sensor import (DEFAULT_INTRINSICS, save_depth_pgm,
                             save_intrinsics)
from planeloc.synth import CAMERA_MOUNT, corridor_world, render_depth


def test_criterion_validation():
    with pytest.raises(ValueError):
        CorrectnessCriterion(max_translation=0.0)
    with pytest.raises(ValueError):
        CorrectnessCriterion(max_rotation=-1.0)


def test_is_correct_boundaries():
    crit = CorrectnessCriterion(max_translation=0.2, max_rotation=math.radians(2.0))
    truth = Pose(phi=np.array([0.0, 0.0, 0.3]), t=np.array([1.0, 2.0, 0.0]))
    assert is_correct(truth, truth, crit)
    near = Pose(phi=truth.phi, t=truth.t + np.array([0.19, 0.0, 0.0]))
    assert is_correct(near, truth, crit)
    far = Pose(phi=truth.phi, t=truth.t + np.array([0.21, 0.0, 0.0]))
    assert not is_correct(far, truth, crit)
    twisted = Pose(phi=np.array([0.0, 0.0, 0.3 + math.radians(2.1)]), t=truth.t)
    assert not is_correct(twisted, truth, crit)
    slightly = Pose(phi=np.array([0.0, 0.0, 0.3 + math.radians(1.9)]), t=truth.t)
    assert is_correct(slightly, truth, crit)


def test_summary_outcome_counts():
    crit = CorrectnessCriterion()
    frames = [
        EvalRecord(frame_id=0, n_segments=0, n_hypotheses=0,
                   first_correct_rank=None, translation_error=None,
                   orientation_error=None),
        EvalRecord(frame_id=1, n_segments=5, n_hypotheses=7,
                   first_correct_rank=None, translation_error=None,
                   orientation_error=None),
        EvalRecord(frame_id=2, n_segments=6, n_hypotheses=9,
                   first_correct_rank=2, translation_error=0.05,
                   orientation_error=math.radians(0.5)),
        EvalRecord(frame_id=3, n_segments=4, n_hypotheses=3,
                   first_correct_rank=1, translation_error=0.01,
                   orientation_error=math.radians(0.1)),
    ]
    summary, histograms = _summarize(crit, frames)
    assert summary["total"] == 4
    assert summary["no_hypothesis"] == 1
    assert summary["no_correct_hypothesis"] == 1
    assert summary["correct_hypothesis"] == 2
    assert summary["correct_fraction"] == 0.5
    assert summary["translation_error_mm"]["mean"] == pytest.approx(30.0)
    assert summary["first_correct_rank"]["median"] == pytest.approx(1.5)
    cum = histograms["first_correct_rank"]["cumulative"]
    assert cum[0] == 0.5 and cum[1] == 1.0    # ranks <= 1, <= 2
    # Degenerate input: no frames at all.
    empty_summary, _ = _summarize(crit, [])
    assert empty_summary["correct_fraction"] is None
    assert empty_summary["translation_error_mm"]["mean"] is None


def _mini_dataset(tmp_path):
    """Render a short mapping run plus two close-by query frames."""
    world = corridor_world(seed=2)
    save_intrinsics(DEFAULT_INTRINSICS, tmp_path / "intrinsics.json")

    def record(i, robot, prefix):
        cam = compose(robot, CAMERA_MOUNT)
        img = render_depth(world, cam, DEFAULT_INTRINSICS, max_range=8.0)
        path = tmp_path / f"{prefix}_{i:03d}.pgm"
        save_depth_pgm(img, path)
        return ManifestRecord(frame_id=i, depth_path=str(path),
                              intrinsics_path=str(tmp_path / "intrinsics.json"),
                              odometry=robot, ground_truth=robot)

    def robot(x, y, heading):
        return Pose(phi=np.array([0.0, 0.0, heading]), t=np.array([x, y, 0.0]))

    map_recs = [record(i, robot(1.0 + 0.6 * i, 0.0, 0.0), "map") for i in range(5)]
    topo = build_map(map_recs, CAMERA_MOUNT, policy=KeyframePolicy(d_min=0.5))
    queries = [record(0, robot(1.4, 0.25, 0.1), "query"),
               record(1, robot(2.6, -0.2, -0.15), "query")]
    return topo, queries


def test_evaluate_end_to_end(tmp_path):
    topo, queries = _mini_dataset(tmp_path)
    assert len(topo.models) >= 3
    report = evaluate(queries, topo, workers=1)
    assert report.summary["total"] == 2
    assert report.summary["correct_hypothesis"] == 2
    for f in report.frames:
        assert f.n_segments >= 3
        assert f.n_hypotheses >= 1
        assert f.first_correct_rank is not None
        assert f.translation_error <= 0.2
        assert f.orientation_error <= math.radians(2.0)


def test_evaluate_requires_ground_truth(tmp_path):
    topo, queries = _mini_dataset(tmp_path)
    stripped = [ManifestRecord(frame_id=q.frame_id, depth_path=q.depth_path,
                               intrinsics_path=q.intrinsics_path,
                               odometry=q.odometry, ground_truth=None)
                for q in queries]
    with pytest.raises(ValueError):
        evaluate(stripped, topo, workers=1)


def test_evaluate_worker_invariance(tmp_path):
    topo, queries = _mini_dataset(tmp_path)
    a = evaluate(queries, topo, workers=1)
    b = evaluate(queries, topo, workers=4)
    assert a.to_dict() == b.to_dict()


def test_save_report(tmp_path):
    topo, queries = _mini_dataset(tmp_path)
    report = evaluate(queries, topo, workers=1)
    json_path, csv_path = save_report(report, tmp_path / "out")
    with open(json_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["summary"]["total"] == 2
    assert doc["criterion"]["max_translation_m"] == pytest.approx(0.2)
    assert len(doc["frames"]) == 2
    with open(csv_path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "frame_id"
    assert len(rows) == 3
