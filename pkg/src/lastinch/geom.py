"""Rigid and similarity transforms, clouds, meshes and exact nearest neighbours.

Conventions: quaternions are (w, x, y, z), frames are right-handed, rotations
act on column vectors, lengths are meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import DegenerateInput, EmptyCloud, MeshError, SizeMismatch

# ---------------------------------------------------------------------------
# quaternion helpers


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("quaternion must be finite and non-zero")
    if abs(n - 1.0) <= 4e-16:
        # already unit: dividing again could move it by an ulp and break exact round trips
        return q.copy()
    return q / n


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_mul_many(a, bs):
    """``a * b`` for one quaternion ``a`` and a stack ``bs`` of shape (K, 4)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = np.asarray(bs, dtype=np.float64).T
    return np.column_stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_angles(a, bs):
    """Geodesic angles from ``a`` to each quaternion in ``bs``."""
    d = quat_mul_many(quat_conj(a), bs)
    return 2.0 * np.arctan2(np.linalg.norm(d[:, 1:], axis=1), np.abs(d[:, 0]))


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def quat_from_rotvec(v):
    v = np.asarray(v, dtype=np.float64)
    angle = math.sqrt(float(v @ v))
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
        return quat_normalize(q)
    axis = v / angle
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_to_rotvec(q):
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0:
        q = -q
    vn = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if vn < 1e-15:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(vn, q[0])
    return q[1:] / vn * angle


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return quat_from_rotvec(axis * angle)


def quat_angle(a, b):
    """Geodesic angle between two rotations, in radians (atan2 form, accurate near 0)."""
    d = quat_mul(quat_conj(a), b)
    vn = math.sqrt(d[1] * d[1] + d[2] * d[2] + d[3] * d[3])
    return 2.0 * math.atan2(vn, abs(d[0]))


def quat_slerp(a, b, u):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if float(a @ b) < 0:
        b = -b
    rel = quat_mul(quat_conj(a), b)
    return quat_normalize(quat_mul(a, quat_from_rotvec(u * quat_to_rotvec(rel))))


def yaw_quat(angle):
    return np.array([math.cos(0.5 * angle), 0.0, 0.0, math.sin(0.5 * angle)])


# ---------------------------------------------------------------------------
# poses


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): ``x -> R x + t``."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(self.q)
        t = np.asarray(self.t, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, t):
        return cls(t=t)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rt(cls, rot, t):
        return cls(matrix_to_quat(rot), t)

    @property
    def R(self):
        r = self.__dict__.get("_R")
        if r is None:
            r = quat_to_matrix(self.q)
            r.setflags(write=False)
            object.__setattr__(self, "_R", r)
        return r

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return invert(self)

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    def rotation_angle(self):
        return quat_angle(np.array([1.0, 0, 0, 0]), self.q)

    def to_dict(self):
        return {"q": [float(v) for v in self.q], "p": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["q"], dtype=np.float64), np.asarray(d["p"], dtype=np.float64))

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.q)
        t = ", ".join(f"{v:.6g}" for v in self.t)
        return f"Pose(q=[{q}], t=[{t}])"


def compose(a: Pose, b: Pose) -> Pose:
    """``a @ b``: apply ``b`` first, then ``a``."""
    return Pose(quat_mul(a.q, b.q), a.R @ b.t + a.t)


def invert(a: Pose) -> Pose:
    qi = quat_conj(a.q)
    return Pose(qi, -(quat_to_matrix(qi) @ a.t))


def pose_distance(a: Pose, b: Pose):
    """(translation distance in meters, rotation geodesic in radians)."""
    return float(np.linalg.norm(a.t - b.t)), quat_angle(a.q, b.q)


def interpolate(a: Pose, b: Pose, u: float) -> Pose:
    """Translation lerp + rotation slerp."""
    return Pose(quat_slerp(a.q, b.q, u), a.t + u * (b.t - a.t))


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> s R x + t``."""

    scale: float
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "q", quat_normalize(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def apply(self, points):
        return self.scale * (np.asarray(points, dtype=np.float64) @ self.R.T) + self.t

    def inverse(self):
        qi = quat_conj(self.q)
        s = 1.0 / self.scale
        return SimilarityTransform(s, qi, -s * (quat_to_matrix(qi) @ self.t))

    def to_dict(self):
        return {"scale": self.scale, "q": [float(v) for v in self.q], "p": [float(v) for v in self.t]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), np.asarray(d["q"]), np.asarray(d["p"]))


# ---------------------------------------------------------------------------
# clouds and meshes


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    source_indices: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.source_indices is not None:
            si = np.asarray(self.source_indices, dtype=np.int64).reshape(-1)
            if len(si) != len(pts):
                raise SizeMismatch("source_indices length differs from points")
            object.__setattr__(self, "source_indices", si)
        if self.normals is not None:
            nm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nm) != len(pts):
                raise SizeMismatch("normals length differs from points")
            object.__setattr__(self, "normals", nm)

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: Pose) -> "PointCloud":
        normals = None if self.normals is None else self.normals @ pose.R.T
        return PointCloud(pose.apply(self.points), self.source_indices, normals)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        return PointCloud(
            self.points[idx],
            None if self.source_indices is None else self.source_indices[idx],
            None if self.normals is None else self.normals[idx],
        )


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("mesh vertices must be finite")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self):
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def validate(self, eps=1e-18):
        """Raise on degenerate (zero-area) faces."""
        bad = np.nonzero(self.face_areas() <= eps)[0]
        if len(bad):
            raise MeshError(f"{len(bad)} degenerate faces (first: {int(bad[0])})")
        return self

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.faces)

    def scaled(self, scales, center=None) -> "TriangleMesh":
        lo, hi = self.bounds()
        c = 0.5 * (lo + hi) if center is None else np.asarray(center, dtype=np.float64)
        return TriangleMesh((self.vertices - c) * np.asarray(scales, dtype=np.float64) + c, self.faces)


def sample_surface(mesh: TriangleMesh, spacing: float) -> PointCloud:
    """Deterministic surface samples: every vertex, then strict face interiors.

    A face ``(a, b, c)`` gets the grid ``a + i/n1 (b - a) + j/n2 (c - a)`` with
    ``n1, n2`` chosen from the edge lengths and ``i/n1 + j/n2 < 1``, so the
    two halves of a split quad never emit the same diagonal point twice.
    ``source_indices`` holds the owning face (``-1`` for vertices); normals are
    face normals, area-weighted at vertices.
    """
    v, f = mesh.vertices, mesh.faces
    fn = mesh.face_normals()
    areas = mesh.face_areas()
    vn = np.zeros_like(v)
    for k in range(3):
        np.add.at(vn, f[:, k], fn * areas[:, None])
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
    pts = [v]
    nrm = [vn]
    src = [np.full(len(v), -1, dtype=np.int64)]
    for i, (a, b, c) in enumerate(v[f]):
        n1 = int(math.ceil(np.linalg.norm(b - a) / spacing))
        n2 = int(math.ceil(np.linalg.norm(c - a) / spacing))
        if n1 < 2 and n2 < 2:
            continue
        ii, jj = np.meshgrid(np.arange(1, n1), np.arange(1, n2), indexing="ij")
        u = ii.ravel() / n1
        w = jj.ravel() / n2
        keep = u + w < 1.0 - 1e-12
        if not keep.any():
            continue
        u, w = u[keep, None], w[keep, None]
        p = a + u * (b - a) + w * (c - a)
        pts.append(p)
        nrm.append(np.repeat(fn[i][None], len(p), axis=0))
        src.append(np.full(len(p), i, dtype=np.int64))
    return PointCloud(np.vstack(pts), np.concatenate(src), np.vstack(nrm))


# ---------------------------------------------------------------------------
# alignment


def umeyama_similarity(src, dst) -> SimilarityTransform:
    """Closed-form least-squares similarity ``dst ~ s R src + t`` (uniform weights)."""
    x = np.asarray(getattr(src, "points", src), dtype=np.float64).reshape(-1, 3)
    y = np.asarray(getattr(dst, "points", dst), dtype=np.float64).reshape(-1, 3)
    if len(x) != len(y):
        raise SizeMismatch(f"{len(x)} source vs {len(y)} target points")
    if len(x) < 3:
        raise DegenerateInput("need at least 3 correspondences")
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    sv = np.linalg.svd(xc, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateInput("source points are collinear (rank < 2)")
    n = len(x)
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rot = (u * s) @ vt
    var_x = float((xc * xc).sum()) / n
    scale = float((d * s).sum()) / var_x
    t = my - scale * rot @ mx
    return SimilarityTransform(scale, matrix_to_quat(rot), t)


# ---------------------------------------------------------------------------
# nearest neighbours


def _as_points(cloud):
    return np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)


class NearestNeighborIndex:
    """Exact nearest-neighbour queries with lowest-index tie breaking.

    A k-d tree proposes the ``k`` closest candidates; squared distances are then
    recomputed with the same arithmetic as the brute-force scan so ties are
    resolved identically. Queries whose candidate list might be truncated
    inside a tie fall back to the scan.
    """

    def __init__(self, cloud, k=8):
        self.points = np.ascontiguousarray(_as_points(cloud))
        if len(self.points) == 0:
            raise EmptyCloud("nearest-neighbour index over an empty cloud")
        self.k = min(k, len(self.points))
        self._tree = cKDTree(self.points)

    def query(self, queries):
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        _, cand = self._tree.query(q, k=self.k)
        cand = np.asarray(cand).reshape(len(q), self.k)
        diff = q[:, None, :] - self.points[cand]
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + diff[..., 2] * diff[..., 2]
        best = d2.min(axis=1)
        tie = d2 == best[:, None]
        masked = np.where(tie, cand, np.iinfo(np.int64).max)
        idx = masked.min(axis=1)
        if self.k < len(self.points):
            # a tie at the k-th slot may hide lower-index equals outside the list
            redo = np.nonzero(d2[:, -1] <= best)[0]
            if len(redo):
                ri, rd = _kernels.nn_scan(q[redo], self.points)
                idx[redo] = ri
                best[redo] = rd
        return idx.astype(np.int64), np.sqrt(best)


def nearest_neighbor(query, cloud):
    """Index and Euclidean distance of the cloud point closest to ``query``."""
    pts = _as_points(cloud)
    if len(pts) == 0:
        raise EmptyCloud("nearest_neighbor on an empty cloud")
    idx, d2 = _kernels.nn_scan(np.asarray(query, dtype=np.float64).reshape(1, 3), pts)
    return int(idx[0]), math.sqrt(float(d2[0]))


def nearest_neighbors(queries, cloud):
    """Vectorized ``nearest_neighbor`` for many queries (k-d tree accelerated)."""
    return NearestNeighborIndex(cloud).query(queries)


def brute_force_nearest(queries, cloud):
    pts = _as_points(cloud)
    if len(pts) == 0:
        raise EmptyCloud("nearest-neighbour scan over an empty cloud")
    idx, d2 = _kernels.nn_scan(queries, pts)
    return idx, np.sqrt(d2)


# ---------------------------------------------------------------------------
# file formats


def load_obj(path) -> TriangleMesh:
    """ASCII OBJ subset: ``v`` and triangular ``f`` records, others ignored."""
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            try:
                xyz = [float(s) for s in parts[1:4]]
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: bad vertex") from exc
            if len(xyz) != 3 or not all(math.isfinite(c) for c in xyz):
                raise MeshError(f"{path}:{lineno}: vertex must have 3 finite coordinates")
            verts.append(xyz)
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise MeshError(f"{path}:{lineno}: only triangular faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces).reshape(-1, 3)).validate()


def save_obj(mesh: TriangleMesh, path):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_points(path) -> PointCloud:
    """ASCII PLY (x y z vertex properties) or whitespace-separated XYZ text."""
    text = Path(path).read_text().splitlines()
    if text and text[0].strip() == "ply":
        n, props, start = 0, [], None
        for i, line in enumerate(text[1:], 1):
            parts = line.split()
            if parts[:2] == ["format", "binary_little_endian"] or parts[:2] == ["format", "binary_big_endian"]:
                raise ValueError("only ASCII PLY is supported")
            if parts[:2] == ["element", "vertex"]:
                n = int(parts[2])
            elif parts and parts[0] == "property" and n and start is None:
                props.append(parts[-1])
            elif parts == ["end_header"]:
                start = i + 1
                break
        if start is None:
            raise ValueError(f"{path}: missing end_header")
        cols = [props.index(c) for c in ("x", "y", "z")]
        rows = [text[start + k].split() for k in range(n)]
        pts = np.asarray([[float(r[c]) for c in cols] for r in rows], dtype=np.float64).reshape(-1, 3)
    else:
        rows = [line.split() for line in text if line.strip() and not line.lstrip().startswith("#")]
        pts = np.asarray([[float(v) for v in r[:3]] for r in rows], dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite coordinates")
    return PointCloud(pts)


def save_ply(cloud, path):
    pts = _as_points(cloud)
    header = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
              "property double x", "property double y", "property double z", "end_header"]
    body = [f"{x!r} {y!r} {z!r}" for x, y, z in pts.tolist()]
    Path(path).write_text("\n".join(header + body) + "\n")
