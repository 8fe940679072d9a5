"""Compiled kernels vs the NumPy fallback on workloads the pipeline actually runs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N wall time of each backend, the
speedup, and whether both backends returned identical results.
"""
import argparse
import math
import sys
import time

import numpy as np

from lastinch import _kernels
from lastinch.geom import Pose, quat_from_axis_angle, sample_surface
from lastinch.shapes import make_mesh
from lastinch.simgen import BUILTIN_CATEGORIES, default_camera
from lastinch.tasks import insertion_task


def best_of(fn, repeat):
    best, out = math.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def workloads():
    spec = BUILTIN_CATEGORIES["gears"]
    mesh = make_mesh(spec["shape"], **spec["models"]["gear_a"])
    cam = default_camera()
    local = mesh.transformed(cam.pose.inverse())
    raster = (local.vertices, local.faces, cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)

    rng = np.random.default_rng(0)
    cloud = rng.uniform(-0.05, 0.05, (4000, 3))
    queries = rng.uniform(-0.05, 0.05, (2000, 3))

    task = insertion_task(0.0005)
    pts = sample_surface(task.demo_mesh, 0.003).points
    pose = Pose(quat_from_axis_angle([1, 0, 0], 0.05), [0.001, 0.0, 0.02])
    prims = task.scene._packed
    posed = (pts, pose.R, pose.t, prims)
    return [
        ("rasterize_depth 160x120", "rasterize_depth", raster),
        ("nn_scan 2000x4000", "nn_scan", (queries, cloud)),
        (f"posed_min_sdf {len(pts)} pts", "posed_min_sdf", posed),
        (f"posed_sdf {len(pts)} pts", "posed_sdf", posed),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled kernels not available; build with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':28s} {'compiled ms':>12s} {'python ms':>12s} {'speedup':>8s}  identical")
    for label, name, call_args in workloads():
        if name.startswith("posed"):
            call_args = _kernels._pose_args(*call_args)
        tc, rc = best_of(lambda: getattr(_kernels.compiled, name)(*call_args), args.repeat)
        tp, rp = best_of(lambda: getattr(_kernels.python, name)(*call_args), args.repeat)
        print(f"{label:28s} {tc * 1e3:12.3f} {tp * 1e3:12.3f} {tp / tc:7.1f}x  {same(rc, rp)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
