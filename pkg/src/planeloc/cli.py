"""Command-line interface.

Subcommands cover the full pipeline: ``segment`` a single depth image,
``build-map`` from a frame manifest, ``localize`` one frame against a map,
``synth`` to generate a synthetic benchmark dataset, and ``evaluate`` to
score a query manifest.  Exit codes: 0 success, 1 usage error, 2 I/O or
parse error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

from . import __version__
from .evaluate import CorrectnessCriterion, evaluate, save_report
from .features import features_from_segments
from .mapping import (KeyframePolicy, build_map, load_map, pose_from_dict,
                      read_manifest, save_map)
from .mapping import _feature_to_dict
from .registration import MatchPrior, localize, save_hypotheses
from .segmentation import SegmentationParams, save_labels, segment_depth_image
from .sensor import NoiseModel, load_depth_pgm, load_intrinsics
from .synth import CAMERA_MOUNT, synth_benchmark


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage problems with exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_noise_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kz", type=float, default=NoiseModel.k_z,
                   help="axial noise coefficient: sigma_z = kz * z^2 (default %(default)s)")
    p.add_argument("--sigma-px", type=float, default=NoiseModel.sigma_px,
                   help="image-plane noise in pixels (default %(default)s)")


def _add_seg_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau-split", type=float, default=SegmentationParams.tau_split,
                   help="triangle refinement tolerance in meters (default %(default)s)")
    p.add_argument("--tau-merge", type=float, default=SegmentationParams.tau_merge,
                   help="region merge RMS tolerance in meters (default %(default)s)")
    p.add_argument("--min-points", type=int, default=SegmentationParams.min_points,
                   help="minimum pixels per segment (default %(default)s)")


def _noise(args) -> NoiseModel:
    return NoiseModel(sigma_px=args.sigma_px, k_z=args.kz)


def _seg_params(args) -> SegmentationParams:
    return SegmentationParams(tau_split=args.tau_split, tau_merge=args.tau_merge,
                              min_points=args.min_points)


def _mount(args):
    if args.mount_file is None:
        return CAMERA_MOUNT
    with open(args.mount_file, "r", encoding="utf-8") as fh:
        return pose_from_dict(json.load(fh), args.mount_file)


def _cmd_segment(args) -> int:
    image = load_depth_pgm(args.depth)
    intr = load_intrinsics(args.intrinsics)
    labeling, cloud = segment_depth_image(image, intr, _seg_params(args), _noise(args))
    save_labels(labeling, args.output)
    if args.features:
        feats = features_from_segments(cloud, labeling.segments, intr, _noise(args))
        with open(args.features, "w", encoding="utf-8") as fh:
            json.dump([_feature_to_dict(f) for f in feats], fh, indent=1)
            fh.write("\n")
    print(f"{labeling.n_segments} segments -> {args.output}")
    return 0


def _cmd_build_map(args) -> int:
    records = read_manifest(args.manifest)
    policy = KeyframePolicy(d_min=args.keyframe_dist,
                            theta_min=math.radians(args.keyframe_angle))
    topo = build_map(records, _mount(args), policy=policy,
                     params=_seg_params(args), noise=_noise(args))
    save_map(topo, args.output)
    print(f"{len(topo.models)} local models -> {args.output}")
    return 0


def _cmd_localize(args) -> int:
    topo = load_map(args.map)
    image = load_depth_pgm(args.depth)
    intr = load_intrinsics(args.intrinsics)
    labeling, cloud = segment_depth_image(image, intr, _seg_params(args), _noise(args))
    feats = features_from_segments(cloud, labeling.segments, intr, _noise(args))
    hyps = localize(feats, topo, MatchPrior(), max_hypotheses=args.max_hypotheses)
    save_hypotheses(hyps, args.output)
    print(f"{len(hyps)} hypotheses -> {args.output}")
    return 0


def _cmd_synth(args) -> int:
    data = synth_benchmark(args.output, seed=args.seed, noise=_noise(args),
                           dropout=args.dropout, build=not args.no_map)
    print(f"{data.n_mapping_frames} mapping frames, {data.n_query_frames} query "
          f"frames, {data.n_models} models -> {data.root}")
    return 0


def _cmd_evaluate(args) -> int:
    topo = load_map(args.map)
    records = read_manifest(args.manifest)
    criterion = CorrectnessCriterion(max_translation=args.max_translation,
                                     max_rotation=math.radians(args.max_rotation))
    report = evaluate(records, topo, prior=MatchPrior(), criterion=criterion,
                      params=_seg_params(args), noise=_noise(args))
    json_path, csv_path = save_report(report, args.output)
    s = report.summary
    print(f"{s['correct_hypothesis']}/{s['total']} frames correct "
          f"({s['no_hypothesis']} without hypotheses) -> {json_path}, {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="planeloc",
                     description="Global localization from planar surface segments "
                                 "in depth images.")
    parser.add_argument("--version", action="version", version=f"planeloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("segment", parents=[], help="segment one depth image into planar regions")
    p.add_argument("--depth", required=True, help="input 16-bit PGM depth image")
    p.add_argument("--intrinsics", required=True, help="camera intrinsics JSON")
    p.add_argument("-o", "--output", required=True, help="output label PGM")
    p.add_argument("--features", help="optional output JSON of per-segment plane features")
    _add_seg_args(p)
    _add_noise_args(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("build-map", help="build a topological map from a frame manifest")
    p.add_argument("--manifest", required=True, help="JSON-Lines manifest of mapping frames")
    p.add_argument("-o", "--output", required=True, help="output map JSON")
    p.add_argument("--keyframe-dist", type=float, default=0.5,
                   help="new model after this travel in meters (default %(default)s)")
    p.add_argument("--keyframe-angle", type=float, default=15.0,
                   help="new model after this rotation in degrees (default %(default)s)")
    p.add_argument("--mount-file", help="camera mount pose JSON (default: forward camera, 0.6 m up)")
    _add_seg_args(p)
    _add_noise_args(p)
    p.set_defaults(func=_cmd_build_map)

    p = sub.add_parser("localize", help="localize one depth frame against a map")
    p.add_argument("--depth", required=True, help="input 16-bit PGM depth image")
    p.add_argument("--intrinsics", required=True, help="camera intrinsics JSON")
    p.add_argument("--map", required=True, help="map JSON produced by build-map")
    p.add_argument("-o", "--output", required=True, help="output hypotheses JSON")
    p.add_argument("--max-hypotheses", type=int, default=64,
                   help="seed cap per local model (default %(default)s)")
    _add_seg_args(p)
    _add_noise_args(p)
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="dataset seed (default %(default)s)")
    p.add_argument("--dropout", type=float, default=0.05,
                   help="pixel dropout probability (default %(default)s)")
    p.add_argument("--no-map", action="store_true", help="skip building the map")
    _add_noise_args(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("evaluate", help="score a query manifest against a map")
    p.add_argument("--manifest", required=True, help="JSON-Lines manifest with ground truth")
    p.add_argument("--map", required=True, help="map JSON")
    p.add_argument("-o", "--output", required=True, help="output report directory")
    p.add_argument("--max-translation", type=float, default=0.2,
                   help="correctness translation tolerance in meters (default %(default)s)")
    p.add_argument("--max-rotation", type=float, default=2.0,
                   help="correctness rotation tolerance in degrees (default %(default)s)")
    _add_seg_args(p)
    _add_noise_args(p)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"planeloc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
