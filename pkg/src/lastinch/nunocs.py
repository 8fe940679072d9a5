"""Non-uniform normalized object coordinates: labels, losses, 9D pose and predictors.

An instance is mapped into the category unit cube by normalizing each axis of
its bounding box independently. The per-axis extents, divided by the first
one, form the scale triple ``(1, alpha, beta)``.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateExtent,
    EmptyCloud,
    EmptyDatabase,
    InvalidDistribution,
    MissingArtifact,
    SizeMismatch,
)
from .geom import (
    NearestNeighborIndex,
    Pose,
    SimilarityTransform,
    TriangleMesh,
    load_obj,
    quat_angle,
    quat_mul,
    quat_to_matrix,
    sample_surface,
    umeyama_similarity,
    yaw_quat,
)

EXTENT_EPS = 1e-9
DEFAULT_BINS = 100
PIVOT = np.array([0.5, 0.5, 0.5])


@dataclass(frozen=True, eq=False)
class NunocsCloud:
    coords: np.ndarray
    scales: np.ndarray
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.scales, dtype=np.float64).reshape(3)
        if s[0] != 1.0 or not np.all(s > 0):
            raise ValueError(f"scales must be (1, alpha, beta) with alpha, beta > 0, got {s}")
        if len(c) and (c.min() < -1e-9 or c.max() > 1 + 1e-9):
            raise ValueError("NUNOCS coordinates must lie in the unit cube")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "scales", s)
        if self.source_indices is not None:
            object.__setattr__(self, "source_indices", np.asarray(self.source_indices, dtype=np.int64))

    def __len__(self):
        return len(self.coords)


def normalize_to_nunocs(cloud, bounds=None):
    """Per-axis unit-cube normalization; returns ``(NunocsCloud, extents)``.

    ``bounds=(p_min, p_max)`` normalizes against a known box (e.g. the full
    model when ``cloud`` is a partial scan) instead of the cloud's own.
    """
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    if bounds is None:
        p_min, p_max = pts.min(axis=0), pts.max(axis=0)
    else:
        p_min, p_max = (np.asarray(b, dtype=np.float64) for b in bounds)
    extents = p_max - p_min
    if np.any(extents <= EXTENT_EPS):
        raise DegenerateExtent(f"axis extent below {EXTENT_EPS} m: {extents}")
    coords = np.clip((pts - p_min) / extents, 0.0, 1.0)
    src = getattr(cloud, "source_indices", None)
    return NunocsCloud(coords, extents / extents[0], src), extents


def denormalize(coords, extents, p_min):
    return np.asarray(getattr(coords, "coords", coords)) * np.asarray(extents) + np.asarray(p_min)


# ---------------------------------------------------------------------------
# bin classification


@dataclass(frozen=True, eq=False)
class BinEncoding:
    bins: np.ndarray
    B: int = DEFAULT_BINS


def _bin_index(coords, B):
    return np.clip(np.floor(np.asarray(coords) * B).astype(np.int64), 0, B - 1)


def encode_bins(nunocs, B=DEFAULT_BINS) -> BinEncoding:
    if B < 2:
        raise ValueError("need at least 2 bins")
    return BinEncoding(_bin_index(getattr(nunocs, "coords", nunocs), B), B)


def decode_bins(enc: BinEncoding):
    return (enc.bins + 0.5) / enc.B


# ---------------------------------------------------------------------------
# symmetry


@dataclass(frozen=True, eq=False)
class SymmetryGroup:
    rotations: np.ndarray
    pivot: np.ndarray = field(default_factory=lambda: PIVOT.copy())

    def __post_init__(self):
        r = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        if len(r) == 0:
            raise ValueError("symmetry group needs at least the identity")
        object.__setattr__(self, "rotations", r / np.linalg.norm(r, axis=1, keepdims=True))

    def __len__(self):
        return len(self.rotations)

    @classmethod
    def trivial(cls):
        return cls(np.array([[1.0, 0.0, 0.0, 0.0]]))

    @classmethod
    def z_rotations(cls, step_deg=5.0):
        n = int(round(360.0 / step_deg))
        if not math.isclose(n * step_deg, 360.0):
            raise ValueError("step must divide 360 degrees")
        return cls(np.array([yaw_quat(2.0 * math.pi * k / n) for k in range(n)]))

    def contains_identity(self, tol=1e-12):
        return any(quat_angle(q, [1.0, 0, 0, 0]) <= tol for q in self.rotations)

    def is_closed(self, tol=1e-9):
        for a in self.rotations:
            for b in self.rotations:
                ab = quat_mul(a, b)
                if min(quat_angle(ab, c) for c in self.rotations) > tol:
                    return False
        return True

    def apply_about_pivot(self, coords, k):
        """Rotate unit-cube coordinates by group element ``k`` about the pivot."""
        rot = quat_to_matrix(self.rotations[k])
        return (np.asarray(coords) - self.pivot) @ rot.T + self.pivot


# ---------------------------------------------------------------------------
# losses


def _check_distributions(pred, tol=1e-6):
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 3 or p.shape[1] != 3:
        raise InvalidDistribution(f"expected (N, 3, B) distributions, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > tol):
        raise InvalidDistribution("every per-point per-axis distribution must sum to 1")
    return p


def nunocs_loss(pred_probs, gt, sym: SymmetryGroup | None = None, tol=1e-6):
    """Symmetry-aware cross-entropy: min over the group of summed per-point, per-axis CE.

    Ground-truth coordinates are rotated about the cube pivot by each group
    element and re-binned (bins outside the cube clamp to the border bins).
    Natural log; terms are summed, not averaged.
    """
    p = _check_distributions(pred_probs, tol)
    coords = np.asarray(getattr(gt, "coords", gt), dtype=np.float64).reshape(-1, 3)
    if len(coords) != len(p):
        raise SizeMismatch(f"{len(p)} predictions vs {len(coords)} labels")
    sym = sym or SymmetryGroup.trivial()
    B = p.shape[2]
    rows = np.arange(len(p))[:, None]
    axes = np.arange(3)[None, :]
    best = math.inf
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    for k in range(len(sym)):
        bins = _bin_index(sym.apply_about_pivot(coords, k), B)
        ce = -float(logp[rows, axes, bins].sum())
        best = min(best, ce)
    return best


def scale_loss(pred_s, gt_s):
    return float(np.linalg.norm(np.asarray(pred_s, dtype=np.float64) - np.asarray(gt_s, dtype=np.float64)))


def total_loss(nunocs_term, scale_term, lambda1=1.0, lambda2=1.0):
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda1 * nunocs_term + lambda2 * scale_term


def one_hot(coords, B=DEFAULT_BINS, peak=1.0):
    """Per-axis distributions with ``peak`` at each coordinate's bin, the rest spread evenly."""
    bins = _bin_index(np.asarray(coords).reshape(-1, 3), B)
    rest = (1.0 - peak) / (B - 1)
    out = np.full((len(bins), 3, B), rest)
    np.put_along_axis(out, bins[:, :, None], peak, axis=2)
    return out


# ---------------------------------------------------------------------------
# 9D pose


@dataclass(frozen=True, eq=False)
class CategoryPose9D:
    """Observation ``~ similarity(nonuniform_scales * nunocs)``."""

    similarity: SimilarityTransform
    nonuniform_scales: np.ndarray
    residual_rms: float = 0.0

    @property
    def extents(self):
        return self.similarity.scale * np.asarray(self.nonuniform_scales)

    def model_pose(self) -> Pose:
        """Pose of the box-centred instance model frame in the observation frame."""
        sim = self.similarity
        center = sim.scale * (sim.R @ (0.5 * np.asarray(self.nonuniform_scales)))
        return Pose(sim.q, sim.t + center)

    def to_nunocs(self, points):
        local = self.similarity.inverse().apply(points)
        return local / np.asarray(self.nonuniform_scales)

    def to_dict(self):
        return {"similarity": self.similarity.to_dict(),
                "scales": [float(v) for v in self.nonuniform_scales],
                "residual_rms": self.residual_rms}

    @classmethod
    def from_dict(cls, d):
        return cls(SimilarityTransform.from_dict(d["similarity"]), np.asarray(d["scales"]),
                   float(d.get("residual_rms", 0.0)))


def solve_pose9d(predicted: NunocsCloud, observed) -> CategoryPose9D:
    """Apply the predicted scale triple, then solve the 7D similarity in closed form."""
    obs = np.asarray(getattr(observed, "points", observed), dtype=np.float64).reshape(-1, 3)
    if len(obs) != len(predicted):
        raise SizeMismatch(f"{len(predicted)} NUNOCS points vs {len(obs)} observed")
    scaled = predicted.coords * predicted.scales
    sim = umeyama_similarity(scaled, obs)
    resid = sim.apply(scaled) - obs
    rms = float(np.sqrt((resid * resid).sum(axis=1).mean()))
    return CategoryPose9D(sim, predicted.scales.copy(), rms)


def pose9d_from_model(model_pose: Pose, extents) -> CategoryPose9D:
    """Ground-truth 9D pose of a box-centred model with the given bounding-box extents."""
    extents = np.asarray(extents, dtype=np.float64)
    scales = extents / extents[0]
    sigma = float(extents[0])
    t = model_pose.t - sigma * (model_pose.R @ (0.5 * scales))
    return CategoryPose9D(SimilarityTransform(sigma, model_pose.q, t), scales, 0.0)


def label_points(points_world, model_pose: Pose, bounds) -> NunocsCloud:
    """Ground-truth NUNOCS labels of observed points for a model at ``model_pose``."""
    local = model_pose.inverse().apply(np.asarray(points_world, dtype=np.float64))
    nc, _ = normalize_to_nunocs(local, bounds)
    return nc


# ---------------------------------------------------------------------------
# category model library


@dataclass(eq=False)
class Template:
    model_id: str
    mesh: TriangleMesh
    rest_poses: list
    spacing: float = 0.002

    def __post_init__(self):
        self.points = sample_surface(self.mesh, self.spacing)
        lo, hi = self.mesh.bounds()
        self.bounds = (lo, hi)
        self.extents = hi - lo
        self.nunocs, _ = normalize_to_nunocs(self.points, self.bounds)


@dataclass(eq=False)
class CategoryLibrary:
    name: str
    symmetry: SymmetryGroup
    templates: list

    def __len__(self):
        return len(self.templates)

    def get(self, model_id):
        for t in self.templates:
            if t.model_id == model_id:
                return t
        raise KeyError(model_id)

    @classmethod
    def load(cls, directory, spacing=0.002):
        directory = Path(directory)
        manifest = directory / "library.cfg"
        if not manifest.exists():
            raise MissingArtifact(f"no library manifest at {manifest}")
        cp = configparser.ConfigParser()
        cp.read(manifest)
        cat = cp["category"]
        step = cat.getfloat("z_step_deg", fallback=0.0)
        sym = SymmetryGroup.z_rotations(step) if step > 0 else SymmetryGroup.trivial()
        templates = []
        for section in cp.sections():
            if not section.startswith("model."):
                continue
            sec = cp[section]
            rest = []
            for chunk in sec.get("rest_poses", "1 0 0 0").split(";"):
                rest.append(Pose(np.array([float(v) for v in chunk.split()])))
            templates.append(Template(section[len("model."):], load_obj(directory / sec["mesh"]), rest, spacing))
        return cls(cat.get("name", directory.name), sym, templates)


# ---------------------------------------------------------------------------
# predictors


@dataclass(frozen=True, eq=False)
class MatchResult:
    template_index: int
    rest_index: int
    yaw: float
    axis_scale: np.ndarray
    offset: np.ndarray
    score: float
    rotation: np.ndarray

    def model_points(self, template: Template):
        return (template.points.points * self.axis_scale + self.offset) @ self.rotation.T


def _fit_axis_scale(partial_local, tmpl_pts, tmpl_visible, iters=8):
    """Diagonal-affine ICP: ``partial ~ k * template + c`` solved per axis."""
    k = np.ones(3)
    lo_p, hi_p = partial_local.min(axis=0), partial_local.max(axis=0)
    lo_t, hi_t = tmpl_visible.min(axis=0), tmpl_visible.max(axis=0)
    c = 0.5 * (lo_p + hi_p) - 0.5 * (lo_t + hi_t)
    for _ in range(iters):
        cur = tmpl_visible * k + c
        _, j = cKDTree(cur).query(partial_local)
        _, i = cKDTree(partial_local).query(cur)
        src = np.vstack([tmpl_visible[j], tmpl_visible])
        dst = np.vstack([partial_local, partial_local[i]])
        for a in range(3):
            x, y = src[:, a], dst[:, a]
            xm, ym = x.mean(), y.mean()
            var = float(((x - xm) ** 2).mean())
            if var > 1e-12:
                k[a] = max(float(((x - xm) * (y - ym)).mean()) / var, 0.2)
            c[a] = ym - k[a] * xm
    cur = tmpl_visible * k + c
    d1, _ = cKDTree(cur).query(partial_local)
    d2, _ = cKDTree(partial_local).query(cur)
    return k, c, float(d1.mean() + d2.mean())


def match_template(partial, library: CategoryLibrary, viewpoint=None, yaw_step_deg=5.0,
                   max_points=400) -> MatchResult:
    """Brute-force search over template x rest pose x yaw, scored by symmetric chamfer.

    ``partial`` must be gravity aligned (world +z up). Yaws equivalent under the
    category symmetry are skipped. Template points facing away from
    ``viewpoint`` are excluded from the template side of the chamfer.
    Ties resolve to the lowest template, then rest pose, then yaw index.
    """
    pts = np.asarray(getattr(partial, "points", partial), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloud("empty partial cloud")
    if len(library) == 0:
        raise EmptyDatabase("category library has no templates")
    stride = max(1, len(pts) // max_points)
    sub = pts[::stride]
    n_yaw = int(round(360.0 / yaw_step_deg))
    sym_yaws = [2.0 * math.atan2(q[3], q[0]) for q in library.symmetry.rotations
                if abs(q[1]) < 1e-12 and abs(q[2]) < 1e-12]
    yaws = []
    for y in range(n_yaw):
        a = 2.0 * math.pi * y / n_yaw
        redundant = False
        for z in yaws:
            for g in sym_yaws:
                d = (a - 2.0 * math.pi * z / n_yaw - g) % (2.0 * math.pi)
                if min(d, 2.0 * math.pi - d) < 1e-9:
                    redundant = True
        if not redundant:
            yaws.append(y)
    best = None
    for ti, tmpl in enumerate(library.templates):
        tstride = max(1, len(tmpl.points) // (2 * max_points))
        tp = tmpl.points.points[::tstride]
        tn = tmpl.points.normals[::tstride]
        for ri, rest in enumerate(tmpl.rest_poses):
            for y in yaws:
                rot = quat_to_matrix(yaw_quat(2.0 * math.pi * y / n_yaw)) @ rest.R
                local = sub @ rot
                vis = tp
                if viewpoint is not None:
                    view_local = np.asarray(viewpoint) @ rot
                    # the template's centre is unknown until fitted; use the partial's centroid
                    facing = ((view_local - local.mean(axis=0)) * tn).sum(axis=1) > 0
                    if facing.sum() >= 10:
                        vis = tp[facing]
                k, c, score = _fit_axis_scale(local, tp, vis)
                if best is None or score < best.score - 1e-15:
                    best = MatchResult(ti, ri, 2.0 * math.pi * y / n_yaw, k, c, score, rot)
    return best


def predict_nunocs(partial, library: CategoryLibrary | None = None, mode="oracle", truth=None,
                   viewpoint=None) -> NunocsCloud:
    """NUNOCS prediction for a partial scan.

    ``oracle`` reads exact labels from ``truth`` (a ``(model_pose, bounds)`` pair
    supplied by the scene generator). ``matcher`` fits the closest library
    template and copies the NUNOCS label of each point's nearest template point.
    """
    pts = np.asarray(getattr(partial, "points", partial), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyCloud("empty partial cloud")
    src = getattr(partial, "source_indices", None)
    if mode == "oracle":
        if truth is None:
            raise ValueError("oracle mode needs the generator ground truth")
        model_pose, bounds = truth
        nc = label_points(pts, model_pose, bounds)
        return NunocsCloud(nc.coords, nc.scales, src)
    if mode != "matcher":
        raise ValueError(f"unknown predictor mode {mode!r}")
    return match_nunocs(partial, library, viewpoint)[0]


def match_nunocs(partial, library: CategoryLibrary, viewpoint=None):
    """Matcher prediction and the winning ``MatchResult``.

    Each point takes the NUNOCS label of its nearest fitted template point.
    """
    if library is None or len(library) == 0:
        raise EmptyDatabase("matcher mode needs a non-empty category library")
    pts = np.asarray(getattr(partial, "points", partial), dtype=np.float64).reshape(-1, 3)
    m = match_template(pts, library, viewpoint)
    tmpl = library.templates[m.template_index]
    fitted = m.model_points(tmpl)
    idx, _ = NearestNeighborIndex(fitted).query(pts)
    ext = tmpl.extents * m.axis_scale
    return NunocsCloud(tmpl.nunocs.coords[idx], ext / ext[0], getattr(partial, "source_indices", None)), m
