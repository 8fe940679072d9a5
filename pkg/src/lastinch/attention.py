"""Receptacle signed distance fields and SDF-driven attention anchoring.

Distances are positive outside the receptacle and negative inside. The
attention weight of a model point is one minus its softmax share of
``exp(sdf)``, so the point closest to (or deepest into) the receptacle gets
the highest weight and becomes the anchor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import EmptyScene, MissingAnchorImage
from .geom import Pose

KIND_CODES = {"plane": 0, "box": 1, "cylinder": 2}


@dataclass(frozen=True, eq=False)
class Primitive:
    """A solid in its own frame, placed by ``pose``.

    ``plane``: the half-space ``z <= 0``. ``box``: ``|x_i| <= half_extents_i``.
    ``cylinder``: axis ``z``, ``radius``, ``|z| <= half_height`` (may be ``inf``).
    """

    kind: str
    pose: Pose = field(default_factory=Pose)
    half_extents: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0
    half_height: float = math.inf
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("plane", "box", "cylinder"):
            raise ValueError(f"unknown primitive {self.kind!r}")
        if self.kind == "box" and not all(h > 0 for h in self.half_extents):
            raise ValueError("box half extents must be positive")
        if self.kind == "cylinder" and not (self.radius > 0 and self.half_height > 0):
            raise ValueError("cylinder radius and half height must be positive")

    def local(self, points):
        return (np.asarray(points, dtype=np.float64) - self.pose.t) @ self.pose.R

    def sdf(self, points):
        p = self.local(points)
        if self.kind == "plane":
            return p[..., 2].copy()
        if self.kind == "box":
            q = np.abs(p) - np.asarray(self.half_extents)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        radial = np.sqrt(p[..., 0] * p[..., 0] + p[..., 1] * p[..., 1]) - self.radius
        axial = np.abs(p[..., 2]) - self.half_height
        outside = np.hypot(np.maximum(radial, 0.0), np.maximum(axial, 0.0))
        return outside + np.minimum(np.maximum(radial, axial), 0.0)

    def to_dict(self):
        d = {"type": self.kind, "name": self.name, **self.pose.to_dict()}
        if self.kind == "box":
            d["half_extents"] = [float(h) for h in self.half_extents]
        if self.kind == "cylinder":
            d["radius"] = self.radius
            d["half_height"] = self.half_height if math.isfinite(self.half_height) else "inf"
        return d

    def packed(self):
        """Kernel row: kind code, rotation (row-major), translation, shape parameters."""
        if self.kind == "box":
            params = list(self.half_extents)
        elif self.kind == "cylinder":
            params = [self.radius, self.half_height, 0.0]
        else:
            params = [0.0, 0.0, 0.0]
        return np.concatenate([[KIND_CODES[self.kind]], self.pose.R.reshape(-1), self.pose.t, params])


def plane(pose=None, name=""):
    return Primitive("plane", pose or Pose(), name=name)


def box(center, half_extents, q=(1.0, 0.0, 0.0, 0.0), name=""):
    return Primitive("box", Pose(np.asarray(q, dtype=float), center), tuple(float(h) for h in half_extents), name=name)


def cylinder(center, radius, half_height=math.inf, q=(1.0, 0.0, 0.0, 0.0), name=""):
    return Primitive("cylinder", Pose(np.asarray(q, dtype=float), center), radius=float(radius),
                     half_height=float(half_height), name=name)


@dataclass(frozen=True, eq=False)
class SdfScene:
    primitives: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        packed = np.array([p.packed() for p in self.primitives]).reshape(-1, 16)
        packed.setflags(write=False)
        object.__setattr__(self, "_packed", packed)

    def __len__(self):
        return len(self.primitives)

    def sdf(self, points):
        """Union (pointwise minimum) of the primitive distances."""
        if not self.primitives:
            raise EmptyScene("SDF scene has no primitives")
        pts = np.asarray(points, dtype=np.float64)
        out = self.primitives[0].sdf(pts)
        for prim in self.primitives[1:]:
            out = np.minimum(out, prim.sdf(pts))
        return out

    def posed_sdf(self, points, pose: Pose):
        """SDF of ``pose.apply(points)`` through the fused kernel."""
        if not self.primitives:
            raise EmptyScene("SDF scene has no primitives")
        return _kernels.posed_sdf(points, pose.R, pose.t, self._packed)

    def posed_min(self, points, pose: Pose):
        """(smallest SDF, its point index) over ``pose.apply(points)``."""
        if not self.primitives:
            raise EmptyScene("SDF scene has no primitives")
        return _kernels.posed_min_sdf(points, pose.R, pose.t, self._packed)

    def gradient(self, points, eps=1e-7):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        g = np.empty_like(pts)
        for a in range(3):
            d = np.zeros(3)
            d[a] = eps
            g[:, a] = (self.sdf(pts + d) - self.sdf(pts - d)) / (2 * eps)
        n = np.linalg.norm(g, axis=1, keepdims=True)
        return g / np.maximum(n, 1e-300)

    def transformed(self, g: Pose) -> "SdfScene":
        return SdfScene(tuple(
            Primitive(p.kind, g @ p.pose, p.half_extents, p.radius, p.half_height, p.name)
            for p in self.primitives))

    def to_dict(self):
        return {"primitives": [p.to_dict() for p in self.primitives]}


def sdf_eval(scene: SdfScene, point):
    """Signed distance of one point (or an array of points) to the scene."""
    val = scene.sdf(point)
    return float(val) if np.ndim(val) == 0 else val


def min_distance(scene: SdfScene, model_points, pose: Pose):
    """Object-to-receptacle distance: the smallest SDF over the posed model points."""
    return scene.posed_min(np.asarray(getattr(model_points, "points", model_points)), pose)[0]


# ---------------------------------------------------------------------------
# attention


@dataclass(frozen=True, eq=False)
class AttentionMap:
    weights: np.ndarray
    anchor_index: int
    timestamp: float = 0.0
    omega: np.ndarray | None = None


def attention_from_sdf(omega, timestamp=0.0) -> AttentionMap:
    omega = np.asarray(omega, dtype=np.float64).reshape(-1)
    e = np.exp(omega - omega.max())
    weights = 1.0 - e / e.sum()
    # exp is monotone, so the lowest-SDF point carries the largest weight
    anchor = int(np.argmin(omega))
    return AttentionMap(weights, anchor, timestamp, omega)


def attention_heatmap(model_points, pose: Pose, scene: SdfScene, timestamp=0.0) -> AttentionMap:
    pts = np.asarray(getattr(model_points, "points", model_points), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("attention needs at least one model point")
    return attention_from_sdf(scene.sdf(pose.apply(pts)), timestamp)


def anchor_frame(pose: Pose, anchor_point) -> Pose:
    """Frame with the object's orientation, translated to the anchor's world position."""
    return Pose(pose.q, pose.apply(np.asarray(anchor_point, dtype=np.float64)))


def transfer_attention(demo_map: AttentionMap, correspondence, n_novel=None) -> AttentionMap:
    """Carry a heatmap across a demo->novel index map (``-1`` marks no image).

    A novel point takes the largest weight among the demo points mapped onto
    it, or 0 when none is.
    """
    corr = np.asarray(getattr(correspondence, "demo_to_novel", correspondence), dtype=np.int64)
    if len(corr) != len(demo_map.weights):
        raise ValueError("correspondence must cover every demo point")
    if n_novel is None:
        n_novel = getattr(correspondence, "n_novel", None) or int(corr.max()) + 1
    image = int(corr[demo_map.anchor_index])
    if image < 0:
        raise MissingAnchorImage(f"demo anchor {demo_map.anchor_index} has no correspondent")
    weights = np.zeros(n_novel)
    ok = corr >= 0
    np.maximum.at(weights, corr[ok], demo_map.weights[ok])
    return AttentionMap(weights, image, demo_map.timestamp)
