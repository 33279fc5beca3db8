"""Topological maps of planar-segment models, and their on-disk formats.

A map is a graph of *local models*: each model stores the planar features seen
from one keyframe, expressed in that keyframe's camera frame, together with
the robot's world pose at the keyframe (``reference_pose``).  Links connect
models recorded consecutively and carry the relative robot pose between them.
Maps are stored as a single JSON document; frame collections are described by
JSON-Lines manifests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math
import os

import numpy as np

from .features import SurfaceSegmentFeature, features_from_segments
from .geometry import Pose, compose, invert, relative_angle
from .segmentation import SegmentationParams, segment_depth_image
from .sensor import CameraIntrinsics, NoiseModel, load_depth_pgm, load_intrinsics

MAP_SCHEMA = "planeloc-map/1"


class MapFormatError(ValueError):
    """Raised when a map or manifest file cannot be parsed."""


class MapVersionError(MapFormatError):
    """Raised when a map file declares an unsupported schema version."""


def pose_to_dict(pose: Pose) -> dict:
    return {"phi": [float(x) for x in pose.phi], "t": [float(x) for x in pose.t]}


def pose_from_dict(obj: dict, context: str = "pose") -> Pose:
    if not isinstance(obj, dict) or "phi" not in obj or "t" not in obj:
        raise MapFormatError(f"{context}: expected an object with 'phi' and 't'")
    phi = np.asarray(obj["phi"], dtype=np.float64)
    t = np.asarray(obj["t"], dtype=np.float64)
    if phi.shape != (3,) or t.shape != (3,):
        raise MapFormatError(f"{context}: 'phi' and 't' must be 3-vectors")
    return Pose(phi=phi, t=t)


@dataclass(frozen=True)
class KeyframePolicy:
    """A new local model is started after this much motion since the last one."""

    d_min: float = 0.5
    theta_min: float = math.radians(15.0)

    def __post_init__(self) -> None:
        if not (self.d_min > 0.0 and self.theta_min > 0.0):
            raise ValueError("d_min and theta_min must be positive")

    def due(self, last: Pose, current: Pose) -> bool:
        shift = float(np.linalg.norm(current.t - last.t))
        return shift >= self.d_min or relative_angle(last, current) >= self.theta_min


@dataclass(frozen=True)
class LocalModel:
    """Planar features observed from one keyframe."""

    model_id: int
    reference_pose: Pose
    features: list

    def __post_init__(self) -> None:
        if self.model_id < 0:
            raise ValueError(f"model_id must be non-negative, got {self.model_id}")


@dataclass(frozen=True)
class TopologicalMap:
    """Graph of local models; ``links`` are (id_a, id_b, a-to-b robot pose)."""

    models: list
    links: list = field(default_factory=list)
    camera_mount: Pose = field(default_factory=Pose.identity)

    def __post_init__(self) -> None:
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate model ids in map")
        known = set(ids)
        for a, b, _ in self.links:
            if a not in known or b not in known:
                raise ValueError(f"link ({a}, {b}) references an unknown model id")

    def model(self, model_id: int) -> LocalModel:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise KeyError(f"no model with id {model_id}")

    def neighbors(self, model_id: int, depth: int = 1) -> set:
        """Model ids reachable from ``model_id`` within ``depth`` link hops."""
        self.model(model_id)
        adj: dict[int, set] = {}
        for a, b, _ in self.links:
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        seen = {model_id}
        frontier = {model_id}
        for _ in range(depth):
            frontier = {n for f in frontier for n in adj.get(f, ())} - seen
            if not frontier:
                break
            seen |= frontier
        return seen - {model_id}


def _feature_to_dict(f: SurfaceSegmentFeature) -> dict:
    return {"phi": [float(x) for x in f.pose.phi],
            "t": [float(x) for x in f.pose.t],
            "sigma_q": [float(x) for x in f.sigma_q],
            "spread": [float(x) for x in f.spread],
            "point_count": int(f.point_count)}


def _feature_from_dict(obj: dict, context: str) -> SurfaceSegmentFeature:
    try:
        pose = Pose(phi=np.asarray(obj["phi"], dtype=np.float64),
                    t=np.asarray(obj["t"], dtype=np.float64))
        return SurfaceSegmentFeature(pose=pose,
                                     sigma_q=np.asarray(obj["sigma_q"], dtype=np.float64),
                                     spread=np.asarray(obj["spread"], dtype=np.float64),
                                     point_count=int(obj["point_count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MapFormatError(f"{context}: invalid feature record: {exc}") from exc


def save_map(topo: TopologicalMap, path) -> None:
    doc = {"schema": MAP_SCHEMA,
           "camera_mount": pose_to_dict(topo.camera_mount),
           "models": [{"id": m.model_id,
                       "reference_pose": pose_to_dict(m.reference_pose),
                       "features": [_feature_to_dict(f) for f in m.features]}
                      for m in topo.models],
           "links": [{"a": a, "b": b, "pose": pose_to_dict(p)} for a, b, p in topo.links]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_map(path) -> TopologicalMap:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MapFormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "schema" not in doc:
        raise MapFormatError(f"{path}: missing 'schema' field")
    if doc["schema"] != MAP_SCHEMA:
        raise MapVersionError(f"{path}: unsupported schema {doc['schema']!r}, "
                              f"expected {MAP_SCHEMA!r}")
    if not isinstance(doc.get("models"), list):
        raise MapFormatError(f"{path}: missing 'models' list")
    mount = pose_from_dict(doc.get("camera_mount", {"phi": [0, 0, 0], "t": [0, 0, 0]}),
                           "camera_mount")
    models = []
    for i, rec in enumerate(doc["models"]):
        ctx = f"{path}: models[{i}]"
        if not isinstance(rec, dict) or "id" not in rec or "reference_pose" not in rec:
            raise MapFormatError(f"{ctx}: expected an object with 'id' and 'reference_pose'")
        feats = [_feature_from_dict(f, f"{ctx}.features[{j}]")
                 for j, f in enumerate(rec.get("features", []))]
        models.append(LocalModel(model_id=int(rec["id"]),
                                 reference_pose=pose_from_dict(rec["reference_pose"], ctx),
                                 features=feats))
    links = []
    for i, rec in enumerate(doc.get("links", [])):
        ctx = f"{path}: links[{i}]"
        if not isinstance(rec, dict) or "a" not in rec or "b" not in rec:
            raise MapFormatError(f"{ctx}: expected an object with 'a', 'b' and 'pose'")
        links.append((int(rec["a"]), int(rec["b"]), pose_from_dict(rec.get("pose", {}), ctx)))
    try:
        return TopologicalMap(models=models, links=links, camera_mount=mount)
    except ValueError as exc:
        raise MapFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Frame manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    """One recorded frame: file locations plus the robot poses that go with it.

    ``odometry`` is the dead-reckoned robot pose in the world frame;
    ``ground_truth``, when present, is the externally measured robot pose.
    """

    frame_id: int
    depth_path: str
    intrinsics_path: str
    odometry: Pose
    ground_truth: Pose | None = None

    @property
    def reference_pose(self) -> Pose:
        return self.ground_truth if self.ground_truth is not None else self.odometry


def write_manifest(records: list, path) -> None:
    """Write frame records as JSON Lines; paths are stored as given."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = {"frame_id": int(r.frame_id),
                   "depth": r.depth_path,
                   "intrinsics": r.intrinsics_path,
                   "odometry": pose_to_dict(r.odometry)}
            if r.ground_truth is not None:
                doc["ground_truth"] = pose_to_dict(r.ground_truth)
            fh.write(json.dumps(doc) + "\n")


def read_manifest(path) -> list:
    """Read a JSON-Lines manifest; relative paths resolve against its folder."""
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MapFormatError(f"{path}:{ln}: not valid JSON ({exc})") from exc
            try:
                frame_id = int(doc["frame_id"])
                depth = resolve(doc["depth"])
                intr = resolve(doc["intrinsics"])
            except (KeyError, TypeError) as exc:
                raise MapFormatError(f"{path}:{ln}: missing field {exc}") from exc
            odom = pose_from_dict(doc.get("odometry", {}), f"{path}:{ln}: odometry")
            gt = None
            if "ground_truth" in doc:
                gt = pose_from_dict(doc["ground_truth"], f"{path}:{ln}: ground_truth")
            records.append(ManifestRecord(frame_id=frame_id, depth_path=depth,
                                          intrinsics_path=intr, odometry=odom,
                                          ground_truth=gt))
    return records


# ---------------------------------------------------------------------------
# Map building
# ---------------------------------------------------------------------------

def build_map(records: list, camera_mount: Pose,
              policy: KeyframePolicy | None = None,
              params: SegmentationParams | None = None,
              noise: NoiseModel | None = None) -> TopologicalMap:
    """Build a topological map from a sequence of recorded frames.

    Frames are consumed in order; a frame becomes a keyframe when the robot
    has moved far enough from the previous keyframe per ``policy``.  Keyframes
    are segmented and their features stored in the keyframe's camera frame.
    Keyframes that yield no usable features are skipped.  Consecutive models
    are linked with their relative reference pose.
    """
    policy = policy or KeyframePolicy()
    params = params or SegmentationParams()
    noise = noise or NoiseModel()
    intr_cache: dict[str, CameraIntrinsics] = {}
    models: list[LocalModel] = []
    links: list = []
    last_pose: Pose | None = None
    for rec in records:
        ref = rec.reference_pose
        if last_pose is not None and not policy.due(last_pose, ref):
            continue
        intr = intr_cache.get(rec.intrinsics_path)
        if intr is None:
            intr = load_intrinsics(rec.intrinsics_path)
            intr_cache[rec.intrinsics_path] = intr
        image = load_depth_pgm(rec.depth_path)
        labeling, cloud = segment_depth_image(image, intr, params, noise)
        feats = features_from_segments(cloud, labeling.segments, intr, noise)
        if not feats:
            continue
        last_pose = ref
        mid = len(models)
        models.append(LocalModel(model_id=mid, reference_pose=ref, features=feats))
        if mid > 0:
            rel = compose(invert(models[mid - 1].reference_pose), ref)
            links.append((mid - 1, mid, rel))
    return TopologicalMap(models=models, links=links, camera_mount=camera_mount)
