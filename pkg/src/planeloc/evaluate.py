"""Batch evaluation of global localization against ground-truth queries.

Each query frame is segmented and localized against the map; a hypothesis is
*correct* when the robot world pose it implies is within a translation and
rotation tolerance of the ground truth.  The report aggregates per-frame
outcome counts (no hypothesis at all, hypotheses but none correct, at least
one correct), accuracy statistics of the first correct hypothesis, and
normalized cumulative error histograms.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import csv
import json
import math
import os

import numpy as np

from .accel import thread_count
from .features import features_from_segments
from .geometry import Pose, relative_angle
from .mapping import TopologicalMap
from .registration import MatchPrior, localize, world_pose
from .segmentation import SegmentationParams, segment_depth_image
from .sensor import CameraIntrinsics, NoiseModel, load_depth_pgm, load_intrinsics


@dataclass(frozen=True)
class CorrectnessCriterion:
    """Pose-error tolerances that make a hypothesis count as correct."""

    max_translation: float = 0.2
    max_rotation: float = math.radians(2.0)

    def __post_init__(self) -> None:
        if not (self.max_translation > 0.0 and self.max_rotation > 0.0):
            raise ValueError("correctness tolerances must be positive")


def is_correct(estimate: Pose, truth: Pose,
               criterion: CorrectnessCriterion | None = None) -> bool:
    """True when the pose error is inside the criterion's tolerances."""
    criterion = criterion or CorrectnessCriterion()
    t_err = float(np.linalg.norm(estimate.t - truth.t))
    r_err = relative_angle(estimate, truth)
    return t_err <= criterion.max_translation and r_err <= criterion.max_rotation


@dataclass(frozen=True)
class EvalRecord:
    """Localization outcome of one query frame."""

    frame_id: int
    n_segments: int
    n_hypotheses: int
    first_correct_rank: int | None
    translation_error: float | None
    orientation_error: float | None


@dataclass(frozen=True)
class EvalReport:
    criterion: CorrectnessCriterion
    frames: list
    summary: dict
    histograms: dict

    def to_dict(self) -> dict:
        return {
            "criterion": {"max_translation_m": self.criterion.max_translation,
                          "max_rotation_rad": self.criterion.max_rotation},
            "summary": self.summary,
            "histograms": self.histograms,
            "frames": [{"frame_id": f.frame_id,
                        "n_segments": f.n_segments,
                        "n_hypotheses": f.n_hypotheses,
                        "first_correct_rank": f.first_correct_rank,
                        "translation_error_m": f.translation_error,
                        "orientation_error_rad": f.orientation_error}
                       for f in self.frames],
        }


def _stats(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mean": None, "median": None, "p99": None, "max": None}
    return {"mean": float(np.mean(values)),
            "median": float(np.median(values)),
            "p99": float(np.percentile(values, 99.0)),
            "max": float(np.max(values))}


def _cumulative(values: np.ndarray, edges: np.ndarray) -> dict:
    if values.size == 0:
        cum = [0.0] * len(edges)
    else:
        cum = [float(np.mean(values <= e)) for e in edges]
    return {"edges": [float(e) for e in edges], "cumulative": cum}


def _summarize(criterion: CorrectnessCriterion, frames: list) -> tuple[dict, dict]:
    total = len(frames)
    no_hyp = sum(1 for f in frames if f.n_hypotheses == 0)
    correct = sum(1 for f in frames if f.first_correct_rank is not None)
    no_correct = total - no_hyp - correct
    t_err = np.array([f.translation_error for f in frames
                      if f.translation_error is not None])
    r_err = np.array([f.orientation_error for f in frames
                      if f.orientation_error is not None])
    ranks = np.array([f.first_correct_rank for f in frames
                      if f.first_correct_rank is not None], dtype=np.float64)
    summary = {
        "total": total,
        "no_hypothesis": no_hyp,
        "no_correct_hypothesis": no_correct,
        "correct_hypothesis": correct,
        "correct_fraction": (correct / total) if total else None,
        "translation_error_mm": _stats(t_err * 1000.0),
        "orientation_error_deg": _stats(np.degrees(r_err)),
        "first_correct_rank": _stats(ranks),
    }
    histograms = {
        "translation_error_mm": _cumulative(t_err * 1000.0,
                                            np.linspace(5.0, criterion.max_translation * 1000.0, 40)),
        "orientation_error_deg": _cumulative(np.degrees(r_err),
                                             np.linspace(0.05, math.degrees(criterion.max_rotation), 40)),
        "first_correct_rank": _cumulative(ranks, np.arange(1.0, 21.0)),
    }
    return summary, histograms


def evaluate(records: list, topo_map: TopologicalMap,
             prior: MatchPrior | None = None,
             criterion: CorrectnessCriterion | None = None,
             params: SegmentationParams | None = None,
             noise: NoiseModel | None = None,
             workers: int | None = None) -> EvalReport:
    """Localize every query frame and score it against its ground truth.

    Every record must carry a ground-truth robot pose.  ``workers`` caps the
    frame-level parallelism (default from ``PLANELOC_THREADS``); the report
    is identical for any worker count.
    """
    prior = prior or MatchPrior()
    criterion = criterion or CorrectnessCriterion()
    params = params or SegmentationParams()
    noise = noise or NoiseModel()
    for rec in records:
        if rec.ground_truth is None:
            raise ValueError(f"frame {rec.frame_id}: evaluation requires ground_truth")
    if workers is None:
        workers = thread_count()
    intr_cache: dict[str, CameraIntrinsics] = {}
    for rec in records:
        if rec.intrinsics_path not in intr_cache:
            intr_cache[rec.intrinsics_path] = load_intrinsics(rec.intrinsics_path)

    def run_frame(rec) -> EvalRecord:
        intr = intr_cache[rec.intrinsics_path]
        image = load_depth_pgm(rec.depth_path)
        labeling, cloud = segment_depth_image(image, intr, params, noise)
        feats = features_from_segments(cloud, labeling.segments, intr, noise)
        hyps = localize(feats, topo_map, prior, workers=1) if feats else []
        rank = None
        t_err = None
        r_err = None
        for k, h in enumerate(hyps, start=1):
            est = world_pose(h, topo_map)
            if is_correct(est, rec.ground_truth, criterion):
                rank = k
                t_err = float(np.linalg.norm(est.t - rec.ground_truth.t))
                r_err = relative_angle(est, rec.ground_truth)
                break
        return EvalRecord(frame_id=rec.frame_id, n_segments=labeling.n_segments,
                          n_hypotheses=len(hyps), first_correct_rank=rank,
                          translation_error=t_err, orientation_error=r_err)

    if workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            frames = list(pool.map(run_frame, records))
    else:
        frames = [run_frame(rec) for rec in records]
    summary, histograms = _summarize(criterion, frames)
    return EvalReport(criterion=criterion, frames=frames,
                      summary=summary, histograms=histograms)


def save_report(report: EvalReport, out_dir) -> tuple[str, str]:
    """Write ``report.json`` and a per-frame ``report.csv``; returns paths."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "n_segments", "n_hypotheses",
                         "first_correct_rank", "translation_error_mm",
                         "orientation_error_deg"])
        for f in report.frames:
            writer.writerow([
                f.frame_id, f.n_segments, f.n_hypotheses,
                "" if f.first_correct_rank is None else f.first_correct_rank,
                "" if f.translation_error is None else f"{f.translation_error * 1000.0:.3f}",
                "" if f.orientation_error is None else f"{math.degrees(f.orientation_error):.4f}",
            ])
    return json_path, csv_path
