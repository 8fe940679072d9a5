"""Parametric meshes for the built-in categories and their stable rest poses.

Every mesh is centred on its bounding box and uses +z as the symmetry axis.
Vertex order is fixed and meaningful: the first vertex touching the ``z = min``
plane is the one a tie-broken anchor search lands on.
"""
from __future__ import annotations

import math

import numpy as np

from .geom import Pose, TriangleMesh, quat_from_axis_angle

SEGMENTS = 72


def _ring(radius, z, n):
    a = 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(a), radius * np.sin(a), np.full(n, z)])


def cylinder_mesh(radius, half_height, segments=SEGMENTS) -> TriangleMesh:
    """Closed cylinder: vertices are [bottom centre, top centre, bottom ring, top ring].

    For a battery the bottom (-z) cap is the negative terminal.
    """
    n = segments
    verts = np.vstack([
        [[0.0, 0.0, -half_height], [0.0, 0.0, half_height]],
        _ring(radius, -half_height, n),
        _ring(radius, half_height, n),
    ])
    cb, ct, b0, t0 = 0, 1, 2, 2 + n
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [
            (b0 + i, b0 + j, t0 + j),
            (b0 + i, t0 + j, t0 + i),
            (ct, t0 + i, t0 + j),
            (cb, b0 + j, b0 + i),
        ]
    return TriangleMesh(verts, np.asarray(faces)).validate()


def gear_mesh(outer_radius, hole_radius, thickness, segments=SEGMENTS) -> TriangleMesh:
    """Toothless gear blank (annulus); vertices are [outer bottom, outer top, inner bottom, inner top] rings."""
    if not 0 < hole_radius < outer_radius:
        raise ValueError("need 0 < hole_radius < outer_radius")
    n = segments
    h = 0.5 * thickness
    verts = np.vstack([
        _ring(outer_radius, -h, n),
        _ring(outer_radius, h, n),
        _ring(hole_radius, -h, n),
        _ring(hole_radius, h, n),
    ])
    ob, ot, ib, it = 0, n, 2 * n, 3 * n
    faces = []
    for i in range(n):
        j = (i + 1) % n
        faces += [
            (ob + i, ob + j, ot + j), (ob + i, ot + j, ot + i),
            (ib + i, it + j, ib + j), (ib + i, it + i, it + j),
            (it + i, ot + i, ot + j), (it + i, ot + j, it + j),
            (ib + i, ob + j, ob + i), (ib + i, ib + j, ob + j),
        ]
    return TriangleMesh(verts, np.asarray(faces)).validate()


def box_mesh(half_extents) -> TriangleMesh:
    hx, hy, hz = half_extents
    verts = np.array([[sx * hx, sy * hy, sz * hz]
                      for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)], dtype=np.float64)
    # index = sx_bit + 2*sy_bit + 4*sz_bit
    faces = np.array([
        (0, 2, 3), (0, 3, 1),      # -z
        (4, 5, 7), (4, 7, 6),      # +z
        (0, 1, 5), (0, 5, 4),      # -y
        (2, 6, 7), (2, 7, 3),      # +y
        (0, 4, 6), (0, 6, 2),      # -x
        (1, 3, 7), (1, 7, 5),      # +x
    ])
    return TriangleMesh(verts, faces).validate()


def rest_poses(shape: str):
    """Stable resting orientations (model -> world rotation) for a base shape."""
    up = Pose()
    if shape == "gear":
        return {"flat": up}
    if shape == "battery":
        return {"standing": up, "lying": Pose(quat_from_axis_angle([1.0, 0.0, 0.0], math.pi / 2))}
    if shape == "box":
        return {"flat": up}
    raise ValueError(f"unknown shape {shape!r}")


def make_mesh(shape: str, **dims) -> TriangleMesh:
    """Build a mesh from meter-valued dimensions named as in scenario configs."""
    if shape == "gear":
        return gear_mesh(dims["outer_radius"], dims["hole_radius"], dims["thickness"])
    if shape == "battery":
        return cylinder_mesh(dims["radius"], dims["half_height"])
    if shape == "box":
        return box_mesh(dims["half_extents"])
    raise ValueError(f"unknown shape {shape!r}")
