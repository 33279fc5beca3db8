"""Compare the compiled (numba) and vectorized-numpy kernel backends.

The backend is fixed per process at import time by the PLANELOC_NUMBA
environment variable, so this script re-executes itself once per backend and
merges the timings into one table:

    python benchmarks/bench_kernels.py [--repeat N] [--json]

Each workload is warmed once (letting numba compile) and then timed
``--repeat`` times; the best time is reported.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workloads():
    from planeloc.features import SurfaceSegmentFeature
    from planeloc.geometry import Pose, PoseBelief, vector_from_rotation
    from planeloc.kernels import max_plane_excess, raycast_rects
    from planeloc.registration import ekf_update
    from planeloc.segmentation import SegmentationParams, segment_depth_image
    from planeloc.sensor import DEFAULT_INTRINSICS, NoiseModel
    from planeloc.synth import corridor_world, mapping_trajectory, render_depth

    k = DEFAULT_INTRINSICS
    world = corridor_world()
    camera = mapping_trajectory()[10]
    rect_rot, rect_t, rect_half = world.as_arrays()
    cols, rows = np.meshgrid(np.arange(k.width, dtype=float),
                             np.arange(k.height, dtype=float))
    dirs = np.column_stack(((cols.ravel() - k.cx) / k.fx,
                            (rows.ravel() - k.cy) / k.fy,
                            np.ones(cols.size))) @ camera.rotation.T
    origin = camera.t

    def bench_raycast():
        raycast_rects(origin, dirs, rect_rot, rect_t, rect_half)

    rng = np.random.default_rng(7)
    pts = rng.normal(size=(76800, 3)) * 2.0
    tol = np.full(76800, 0.01)
    tri = rng.integers(-1, 800, size=76800)
    normals = rng.normal(size=(800, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    planes = np.column_stack([normals, rng.normal(size=800)])

    def bench_excess():
        max_plane_excess(pts, tol, tri, planes, 800)

    def feature(normal, centroid):
        n = np.asarray(normal, float)
        n = n / np.linalg.norm(n)
        a = np.array([1.0, 0, 0]) if abs(n[0]) < 0.9 else np.array([0, 1.0, 0])
        e1 = np.cross(n, a)
        e1 /= np.linalg.norm(e1)
        rot = np.column_stack([e1, np.cross(n, e1), n])
        return SurfaceSegmentFeature(pose=Pose(phi=vector_from_rotation(rot),
                                               t=np.asarray(centroid, float)),
                                     sigma_q=np.array([1e-5, 1e-5, 1e-6]),
                                     spread=np.array([1.0, 0.6]),
                                     point_count=5000)

    pairs = [(feature([0, 0, -1], [0.1, -0.2, 3.0]), feature([0, 0, -1], [0.13, -0.18, 3.01])),
             (feature([1, 0, 0], [-2.0, 0.3, 2.5]), feature([1, 0, 0], [-1.98, 0.32, 2.52])),
             (feature([0, 1, 0], [0.4, -1.8, 2.2]), feature([0, 1, 0], [0.42, -1.78, 2.21]))]
    prior = PoseBelief(mean=Pose.identity(), cov=np.diag([0.05] * 3 + [0.3] * 3))

    def bench_updates():
        belief = prior
        for _ in range(150):
            for scene, model in pairs:
                belief = ekf_update(belief, scene, model).belief

    frame = render_depth(world, camera, k)
    params = SegmentationParams()
    noise = NoiseModel()

    def bench_segment():
        segment_depth_image(frame, k, params, noise)

    return [("raycast 320x240 x 100 rects", bench_raycast),
            ("plane excess 76800 pts", bench_excess),
            ("ekf updates x 450", bench_updates),
            ("segment one frame", bench_segment)]


def run_worker(repeat: int) -> dict:
    import planeloc

    timings = {}
    for name, fn in _workloads():
        fn()  # warm-up; lets the compiled backend finish compilation
        best = min(_timed(fn) for _ in range(repeat))
        timings[name] = best
    return {"backend": planeloc.backend_name(), "timings": timings}


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def run_backend(flag: str, repeat: int) -> dict:
    env = dict(os.environ, PLANELOC_NUMBA=flag)
    proc = subprocess.run([sys.executable, __file__, "--worker",
                           "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5,
                    help="timed repetitions per workload (default 5)")
    ap.add_argument("--json", action="store_true",
                    help="print the merged results as JSON")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.worker:
        print(json.dumps(run_worker(args.repeat)))
        return 0

    compiled = run_backend("1", args.repeat)
    fallback = run_backend("0", args.repeat)
    if compiled["backend"] != "numba" or fallback["backend"] != "numpy":
        raise RuntimeError(f"unexpected backends: {compiled['backend']}, "
                           f"{fallback['backend']}")
    merged = {name: {"numba_s": compiled["timings"][name],
                     "numpy_s": fallback["timings"][name],
                     "speedup": fallback["timings"][name] / compiled["timings"][name]}
              for name in compiled["timings"]}
    if args.json:
        print(json.dumps(merged, indent=2))
        return 0
    width = max(len(n) for n in merged) + 2
    print(f"{'workload':<{width}}{'numba':>10}{'numpy':>10}{'speedup':>9}")
    for name, row in merged.items():
        print(f"{name:<{width}}{row['numba_s'] * 1e3:>8.2f}ms"
              f"{row['numpy_s'] * 1e3:>8.2f}ms{row['speedup']:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
