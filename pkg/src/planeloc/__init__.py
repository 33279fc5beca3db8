"""Global localization of a depth camera against maps of planar surfaces.

The pipeline: depth images are segmented into planar regions
(:mod:`planeloc.segmentation`), each region is condensed into an
uncertainty-carrying plane feature (:mod:`planeloc.features`), features from
mapping runs are collected into a topological map of local models
(:mod:`planeloc.mapping`), and query frames are registered against every
model with a multi-hypothesis EKF (:mod:`planeloc.registration`).
:mod:`planeloc.synth` renders synthetic worlds with ground truth and
:mod:`planeloc.evaluate` scores localization over query datasets.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .accel import USE_NUMBA, backend_name
from .evaluate import CorrectnessCriterion, EvalReport, evaluate, is_correct, save_report
from .features import (DegenerateSegmentError, SurfaceSegmentFeature, build_feature,
                       features_from_segments, fit_plane)
from .geometry import (Pose, PoseBelief, compose, invert, relative_angle,
                       rotation_from_vector, transform_point, vector_from_rotation)
from .mapping import (KeyframePolicy, LocalModel, ManifestRecord, MapFormatError,
                      MapVersionError, TopologicalMap, build_map, load_map,
                      read_manifest, save_map, write_manifest)
from .registration import (CHI2_GATE_3DOF, EkfUpdate, MatchPair, MatchPrior,
                           NumericalDegeneracyError, PoseHypothesis, camera_prior,
                           coplanarity_residual, ekf_update, generate_hypotheses,
                           initial_match, localize, measurement_jacobians,
                           plane_residual, transform_plane, world_pose)
from .segmentation import (SegmentationParams, SegmentLabeling, merge_hierarchical,
                           segment_depth_image, split_triangulate)
from .sensor import (DEFAULT_INTRINSICS, CameraIntrinsics, DepthImage, NoiseModel,
                     backproject, load_depth_pgm, load_intrinsics, point_covariance,
                     save_depth_pgm, save_intrinsics)
from .synth import (CAMERA_MOUNT, Rect, SyntheticWorld, corridor_world,
                    mapping_trajectory, query_trajectory, render_depth, synth_benchmark)

__all__ = [
    "USE_NUMBA", "backend_name",
    "CorrectnessCriterion", "EvalReport", "evaluate", "is_correct", "save_report",
    "DegenerateSegmentError", "SurfaceSegmentFeature", "build_feature",
    "features_from_segments", "fit_plane",
    "Pose", "PoseBelief", "compose", "invert", "relative_angle",
    "rotation_from_vector", "transform_point", "vector_from_rotation",
    "KeyframePolicy", "LocalModel", "ManifestRecord", "MapFormatError",
    "MapVersionError", "TopologicalMap", "build_map", "load_map",
    "read_manifest", "save_map", "write_manifest",
    "CHI2_GATE_3DOF", "EkfUpdate", "MatchPair", "MatchPrior",
    "NumericalDegeneracyError", "PoseHypothesis", "camera_prior",
    "coplanarity_residual", "ekf_update", "generate_hypotheses", "initial_match",
    "localize", "measurement_jacobians", "plane_residual", "transform_plane",
    "world_pose",
    "SegmentationParams", "SegmentLabeling", "merge_hierarchical",
    "segment_depth_image", "split_triangulate",
    "DEFAULT_INTRINSICS", "CameraIntrinsics", "DepthImage", "NoiseModel",
    "backproject", "load_depth_pgm", "load_intrinsics", "point_covariance",
    "save_depth_pgm", "save_intrinsics",
    "CAMERA_MOUNT", "Rect", "SyntheticWorld", "corridor_world",
    "mapping_trajectory", "query_trajectory", "render_depth", "synth_benchmark",
    "__version__",
]
