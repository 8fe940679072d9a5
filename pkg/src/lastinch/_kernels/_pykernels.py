"""NumPy reference implementations of the compiled kernels.

Per-triangle loops are kept in Python; the per-pixel and per-point work is
vectorized. Arithmetic order matches ``_ckernels.pyx``.
"""
import numpy as np

NEAR = 1e-6
DET_EPS = 1e-15


def rasterize_depth(verts, faces, fx, fy, cx, cy, width, height):
    verts = np.ascontiguousarray(verts, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    depth = np.full((height, width), np.inf)
    face_id = np.full((height, width), -1, dtype=np.int64)
    for f, (i0, i1, i2) in enumerate(faces):
        a, b, c = verts[i0], verts[i1], verts[i2]
        zs = (a[2], b[2], c[2])
        if all(z <= NEAR for z in zs):
            continue
        if any(z <= NEAR for z in zs):
            u0, u1, v0, v1 = 0, width - 1, 0, height - 1
        else:
            tri = np.stack([a, b, c])
            pu = fx * tri[:, 0] / tri[:, 2] + cx - 0.5
            pv = fy * tri[:, 1] / tri[:, 2] + cy - 0.5
            u0 = int(min(max(np.floor(pu.min()), 0.0), width))
            u1 = int(max(min(np.ceil(pu.max()), width - 1.0), -1.0))
            v0 = int(min(max(np.floor(pv.min()), 0.0), height))
            v1 = int(max(min(np.ceil(pv.max()), height - 1.0), -1.0))
        if u1 < u0 or v1 < v0:
            continue
        e1 = b - a
        e2 = c - a
        s = -a
        q = np.array([s[1] * e1[2] - s[2] * e1[1],
                      s[2] * e1[0] - s[0] * e1[2],
                      s[0] * e1[1] - s[1] * e1[0]])
        us = np.arange(u0, u1 + 1)
        vs = np.arange(v0, v1 + 1)
        dx = ((us + 0.5 - cx) / fx)[None, :]
        dy = ((vs + 0.5 - cy) / fy)[:, None]
        px = dy * e2[2] - e2[1]
        py = e2[0] - dx * e2[2]
        pz = dx * e2[1] - dy * e2[0]
        px, py, pz = np.broadcast_arrays(px, py, pz)
        det = e1[0] * px + e1[1] * py + e1[2] * pz
        ok = np.abs(det) >= DET_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            bu = (s[0] * px + s[1] * py + s[2] * pz) * inv
            bv = (dx * q[0] + dy * q[1] + q[2]) * inv
            t = (e2[0] * q[0] + e2[1] * q[1] + e2[2] * q[2]) * inv
        ok &= (bu >= 0.0) & (bu <= 1.0) & (bv >= 0.0) & (bu + bv <= 1.0)
        window = depth[v0:v1 + 1, u0:u1 + 1]
        hit = ok & (t > NEAR) & (t < window)
        window[hit] = t[hit]
        face_id[v0:v1 + 1, u0:u1 + 1][hit] = f
    return depth, face_id


def nn_scan(queries, points, chunk=512):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    m = len(queries)
    idx = np.empty(m, dtype=np.int64)
    d2 = np.empty(m)
    for lo in range(0, m, chunk):
        q = queries[lo:lo + chunk]
        dx = q[:, None, 0] - points[None, :, 0]
        dy = q[:, None, 1] - points[None, :, 1]
        dz = q[:, None, 2] - points[None, :, 2]
        dist = dx * dx + dy * dy + dz * dz
        j = np.argmin(dist, axis=1)
        idx[lo:lo + chunk] = j
        d2[lo:lo + chunk] = dist[np.arange(len(q)), j]
    return idx, d2


def _prims_sdf(w, prims):
    best = np.full(len(w), np.inf)
    for row in prims:
        d = w - row[10:13]
        rp = row[1:10].reshape(3, 3)
        lx = rp[0, 0] * d[:, 0] + rp[1, 0] * d[:, 1] + rp[2, 0] * d[:, 2]
        ly = rp[0, 1] * d[:, 0] + rp[1, 1] * d[:, 1] + rp[2, 1] * d[:, 2]
        lz = rp[0, 2] * d[:, 0] + rp[1, 2] * d[:, 1] + rp[2, 2] * d[:, 2]
        kind = int(row[0])
        if kind == 0:
            s = lz
        elif kind == 1:
            qx = np.abs(lx) - row[13]
            qy = np.abs(ly) - row[14]
            qz = np.abs(lz) - row[15]
            ox, oy, oz = np.maximum(qx, 0.0), np.maximum(qy, 0.0), np.maximum(qz, 0.0)
            m = np.maximum(np.maximum(qx, qy), qz)
            s = np.sqrt(ox * ox + oy * oy + oz * oz) + np.minimum(m, 0.0)
        else:
            radial = np.sqrt(lx * lx + ly * ly) - row[13]
            axial = np.abs(lz) - row[14]
            ox, oz = np.maximum(radial, 0.0), np.maximum(axial, 0.0)
            s = np.sqrt(ox * ox + oz * oz) + np.minimum(np.maximum(radial, axial), 0.0)
        best = np.minimum(best, s)
    return best


def posed_sdf(points, rot, trans, prims):
    px, py, pz = points[:, 0], points[:, 1], points[:, 2]
    w = np.empty_like(points)
    for r in range(3):
        w[:, r] = rot[r, 0] * px + rot[r, 1] * py + rot[r, 2] * pz + trans[r]
    return _prims_sdf(w, prims)


def posed_min_sdf(points, rot, trans, prims):
    if len(points) == 0:
        return np.inf, -1
    s = posed_sdf(points, rot, trans, prims)
    i = int(np.argmin(s))
    return float(s[i]), i
