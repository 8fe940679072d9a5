"""Hot kernels with a compiled core and a NumPy fallback chosen at import.

Set ``LASTINCH_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels as python

compiled = None
if os.environ.get("LASTINCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "compiled" if compiled is not None else "python"


def rasterize_depth(verts, faces, fx, fy, cx, cy, width, height):
    """Z-buffer of a camera-frame triangle mesh; returns (depth, face index) images.

    Pixel rays pass through pixel centres; depth is the camera-frame z of the
    exact ray/triangle hit, ``inf`` (face ``-1``) where nothing is hit.
    """
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    return _impl.rasterize_depth(verts, faces, float(fx), float(fy), float(cx), float(cy),
                                 int(width), int(height))


def nn_scan(queries, points):
    """Exact brute-force nearest neighbour of each query; ties go to the lowest index."""
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    return _impl.nn_scan(queries, points)

def _pose_args(points, rot, trans, prims):
    return (np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(rot, dtype=np.float64).reshape(3, 3),
            np.ascontiguousarray(trans, dtype=np.float64).reshape(3),
            np.ascontiguousarray(prims, dtype=np.float64).reshape(-1, 16))


def posed_sdf(points, rot, trans, prims):
    """Scene SDF at ``rot @ p + trans`` for each point, with primitives packed as (P, 16) rows."""
    return _impl.posed_sdf(*_pose_args(points, rot, trans, prims))


def posed_min_sdf(points, rot, trans, prims):
    """(min value, argmin index) of ``posed_sdf``; ``(inf, -1)`` for no points."""
    value, index = _impl.posed_min_sdf(*_pose_args(points, rot, trans, prims))
    return float(value), int(index)


__all__ = ["BACKEND", "compiled", "python", "rasterize_depth", "nn_scan", "posed_sdf", "posed_min_sdf"]
