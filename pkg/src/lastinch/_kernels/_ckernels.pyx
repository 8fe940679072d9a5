# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: depth-buffer rasterization, exact nearest-neighbour scans and posed SDF queries.

All functions mirror ``_pykernels`` line for line so results agree to
floating-point rounding; the fallback module is the reference.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor, ceil, sqrt, INFINITY

cnp.import_array()

cdef double NEAR = 1e-6
cdef double DET_EPS = 1e-15


def rasterize_depth(const double[:, ::1] verts, const cnp.int64_t[:, ::1] faces,
                    double fx, double fy, double cx, double cy,
                    int width, int height):
    depth_arr = np.full((height, width), np.inf)
    face_arr = np.full((height, width), -1, dtype=np.int64)
    cdef double[:, ::1] depth = depth_arr
    cdef cnp.int64_t[:, ::1] face_id = face_arr
    cdef Py_ssize_t f, nf = faces.shape[0]
    cdef int u, v, u0, u1, v0, v1, k
    cdef double ax, ay, az, bx, by, bz, qx, qy, qz
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, px, py, pz, sx, sy, sz
    cdef double det, inv, bu, bv, t, dx, dy, du, dv
    cdef double umin, umax, vmin, vmax, pu, pv
    cdef cnp.int64_t i0, i1, i2, j
    cdef bint behind
    for f in range(nf):
        i0 = faces[f, 0]
        i1 = faces[f, 1]
        i2 = faces[f, 2]
        ax = verts[i0, 0]; ay = verts[i0, 1]; az = verts[i0, 2]
        if az <= NEAR and verts[i1, 2] <= NEAR and verts[i2, 2] <= NEAR:
            continue
        behind = az <= NEAR or verts[i1, 2] <= NEAR or verts[i2, 2] <= NEAR
        if behind:
            u0 = 0; u1 = width - 1; v0 = 0; v1 = height - 1
        else:
            umin = INFINITY; umax = -INFINITY; vmin = INFINITY; vmax = -INFINITY
            for k in range(3):
                j = faces[f, k]
                pu = fx * verts[j, 0] / verts[j, 2] + cx - 0.5
                pv = fy * verts[j, 1] / verts[j, 2] + cy - 0.5
                if pu < umin: umin = pu
                if pu > umax: umax = pu
                if pv < vmin: vmin = pv
                if pv > vmax: vmax = pv
            u0 = <int>min(max(floor(umin), 0.0), <double>width)
            u1 = <int>max(min(ceil(umax), width - 1.0), -1.0)
            v0 = <int>min(max(floor(vmin), 0.0), <double>height)
            v1 = <int>max(min(ceil(vmax), height - 1.0), -1.0)
        e1x = verts[i1, 0] - ax; e1y = verts[i1, 1] - ay; e1z = verts[i1, 2] - az
        e2x = verts[i2, 0] - ax; e2y = verts[i2, 1] - ay; e2z = verts[i2, 2] - az
        sx = -ax; sy = -ay; sz = -az
        # s x e1 is constant across pixels
        qx = sy * e1z - sz * e1y
        qy = sz * e1x - sx * e1z
        qz = sx * e1y - sy * e1x
        for v in range(v0, v1 + 1):
            dy = (v + 0.5 - cy) / fy
            for u in range(u0, u1 + 1):
                dx = (u + 0.5 - cx) / fx
                # p = d x e2 with d = (dx, dy, 1)
                px = dy * e2z - e2y
                py = e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if fabs(det) < DET_EPS:
                    continue
                inv = 1.0 / det
                bu = (sx * px + sy * py + sz * pz) * inv
                if bu < 0.0 or bu > 1.0:
                    continue
                bv = (dx * qx + dy * qy + qz) * inv
                if bv < 0.0 or bu + bv > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t > NEAR and t < depth[v, u]:
                    depth[v, u] = t
                    face_id[v, u] = f
    return depth_arr, face_arr


def nn_scan(const double[:, ::1] queries, const double[:, ::1] points):
    cdef Py_ssize_t m = queries.shape[0], n = points.shape[0], i, j
    idx_arr = np.empty(m, dtype=np.int64)
    d2_arr = np.empty(m)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[::1] out = d2_arr
    cdef double qx, qy, qz, dx, dy, dz, d2, best
    cdef cnp.int64_t best_j
    for i in range(m):
        qx = queries[i, 0]; qy = queries[i, 1]; qz = queries[i, 2]
        best = INFINITY
        best_j = -1
        for j in range(n):
            dx = qx - points[j, 0]
            dy = qy - points[j, 1]
            dz = qz - points[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
                best_j = j
        idx[i] = best_j
        out[i] = best
    return idx_arr, d2_arr


cdef inline double _prim_sdf(const double[:, ::1] prims, Py_ssize_t k,
                             double wx, double wy, double wz) nogil:
    cdef double dx = wx - prims[k, 10]
    cdef double dy = wy - prims[k, 11]
    cdef double dz = wz - prims[k, 12]
    cdef double lx = prims[k, 1] * dx + prims[k, 4] * dy + prims[k, 7] * dz
    cdef double ly = prims[k, 2] * dx + prims[k, 5] * dy + prims[k, 8] * dz
    cdef double lz = prims[k, 3] * dx + prims[k, 6] * dy + prims[k, 9] * dz
    cdef double qx, qy, qz, ox, oy, oz, m, radial, axial
    cdef int kind = <int>prims[k, 0]
    if kind == 0:
        return lz
    if kind == 1:
        qx = fabs(lx) - prims[k, 13]
        qy = fabs(ly) - prims[k, 14]
        qz = fabs(lz) - prims[k, 15]
        ox = qx if qx > 0.0 else 0.0
        oy = qy if qy > 0.0 else 0.0
        oz = qz if qz > 0.0 else 0.0
        m = qx if qx > qy else qy
        m = m if m > qz else qz
        return sqrt(ox * ox + oy * oy + oz * oz) + (m if m < 0.0 else 0.0)
    radial = sqrt(lx * lx + ly * ly) - prims[k, 13]
    axial = fabs(lz) - prims[k, 14]
    ox = radial if radial > 0.0 else 0.0
    oz = axial if axial > 0.0 else 0.0
    m = radial if radial > axial else axial
    return sqrt(ox * ox + oz * oz) + (m if m < 0.0 else 0.0)


def posed_sdf(const double[:, ::1] points, const double[:, ::1] rot, const double[::1] trans,
              const double[:, ::1] prims):
    cdef Py_ssize_t n = points.shape[0], np_ = prims.shape[0], i, k
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double px, py, pz, wx, wy, wz, d, best
    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            wx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
            wy = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
            wz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
            best = INFINITY
            for k in range(np_):
                d = _prim_sdf(prims, k, wx, wy, wz)
                if d < best:
                    best = d
            out[i] = best
    return out_arr


def posed_min_sdf(const double[:, ::1] points, const double[:, ::1] rot, const double[::1] trans,
                  const double[:, ::1] prims):
    cdef Py_ssize_t n = points.shape[0], np_ = prims.shape[0], i, k, arg = -1
    cdef double px, py, pz, wx, wy, wz, d, best, lowest = INFINITY
    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            wx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
            wy = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
            wz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
            best = INFINITY
            for k in range(np_):
                d = _prim_sdf(prims, k, wx, wy, wz)
                if d < best:
                    best = d
            if best < lowest:
                lowest = best
                arg = i
    return lowest, arg
