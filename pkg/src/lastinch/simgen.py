"""Synthetic instances, scenes, partial scans and ground-truth labels.

A physics drop is replaced by sampling from precomputed stable rest poses;
depth images come from the ray-casting kernel.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .demo import DemoLog, Trajectory
from .errors import FractionOutOfRange, OutOfFrustum
from .geom import PointCloud, Pose, TriangleMesh, save_obj, save_ply, yaw_quat
from .nunocs import CategoryPose9D, NunocsCloud, label_points, pose9d_from_model
from .seeding import rng_for
from .shapes import make_mesh, rest_poses

MAX_DROPOUT = 0.4
DEFAULT_SCALE_RANGE = (0.5, 2.0)


# ---------------------------------------------------------------------------
# instances


def random_instance(base: TriangleMesh, rng, scale_range=DEFAULT_SCALE_RANGE):
    """Scale ``base`` per axis about its AABB centre; returns ``(mesh, scales)``.

    ``scale_range`` is one ``(lo, hi)`` pair for all axes or three pairs.
    """
    ranges = np.broadcast_to(np.asarray(scale_range, dtype=np.float64).reshape(-1, 2), (3, 2))
    if np.any(ranges <= 0) or np.any(ranges[:, 1] < ranges[:, 0]):
        raise ValueError("scale ranges must be positive and ordered")
    scales = np.array([lo if lo == hi else rng.uniform(lo, hi) for lo, hi in ranges])
    return base.scaled(scales), scales


# ---------------------------------------------------------------------------
# camera and rendering


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; ``pose`` maps camera coordinates (x right, y down, z forward) to world."""

    pose: Pose
    width: int = 160
    height: int = 120
    fx: float = 300.0
    fy: float = 300.0
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.cx is None:
            object.__setattr__(self, "cx", 0.5 * self.width)
        if self.cy is None:
            object.__setattr__(self, "cy", 0.5 * self.height)

    def scaled(self, factor: int) -> "Camera":
        """Same field of view at ``factor`` times the resolution."""
        return Camera(self.pose, self.width * factor, self.height * factor, self.fx * factor,
                      self.fy * factor, self.cx * factor, self.cy * factor)

    def to_dict(self):
        return {"pose": self.pose.to_dict(), "width": self.width, "height": self.height,
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    eye, target = np.asarray(eye, dtype=np.float64), np.asarray(target, dtype=np.float64)
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("view direction parallel to up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_rt(np.column_stack([x, y, z]), eye)


def default_camera(target=(0.0, 0.0, 0.0), elevation_deg=45.0, distance=0.6, azimuth_deg=-90.0,
                   width=160, height=120, focal=300.0) -> Camera:
    el, az = math.radians(elevation_deg), math.radians(azimuth_deg)
    direction = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    eye = np.asarray(target, dtype=np.float64) + distance * direction
    return Camera(look_at(eye, target), width, height, focal, focal)


def render_depth(mesh: TriangleMesh, pose: Pose, camera: Camera, near=1e-3):
    """Depth and face-index images of ``mesh`` placed at ``pose``."""
    verts = camera.pose.inverse().apply(pose.apply(mesh.vertices))
    z = verts[:, 2]
    if np.any(z <= near):
        raise OutOfFrustum("object reaches behind the camera near plane")
    u = camera.fx * verts[:, 0] / z + camera.cx
    v = camera.fy * verts[:, 1] / z + camera.cy
    if u.min() < 0 or v.min() < 0 or u.max() > camera.width or v.max() > camera.height:
        raise OutOfFrustum("object projects outside the image")
    return _kernels.rasterize_depth(verts, mesh.faces, camera.fx, camera.fy, camera.cx, camera.cy,
                                    camera.width, camera.height)


def render_partial(mesh: TriangleMesh, pose: Pose, camera: Camera) -> PointCloud:
    """World-frame points of every pixel whose ray hits the mesh, in row-major pixel order.

    ``source_indices`` holds the hit face; normals are the world face normals.
    """
    depth, face = render_depth(mesh, pose, camera)
    vs, us = np.nonzero(face >= 0)
    if len(vs) == 0:
        raise OutOfFrustum("no pixel sees the object")
    zs = depth[vs, us]
    rays = np.column_stack([(us + 0.5 - camera.cx) / camera.fx, (vs + 0.5 - camera.cy) / camera.fy,
                            np.ones(len(us))])
    pts = camera.pose.apply(rays * zs[:, None])
    fids = face[vs, us].astype(np.int64)
    normals = mesh.face_normals()[fids] @ pose.R.T
    return PointCloud(pts, fids, normals)


def corrupt_depth(cloud: PointCloud, fraction, rng) -> PointCloud:
    """Drop exactly ``round(N * fraction)`` uniformly chosen points; survivors keep their order."""
    if not 0.0 <= fraction <= MAX_DROPOUT:
        raise FractionOutOfRange(f"dropout fraction {fraction} outside [0, {MAX_DROPOUT}]")
    n = len(cloud)
    k = int(round(n * fraction))
    if k == 0:
        return cloud
    drop = rng.choice(n, size=k, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    return cloud.subset(np.nonzero(keep)[0])


# ---------------------------------------------------------------------------
# scenes


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    mesh: TriangleMesh
    pose: Pose
    table_height: float
    camera: Camera
    partial: PointCloud
    instance_id: str = ""
    scales: np.ndarray = field(default_factory=lambda: np.ones(3))
    rest_index: int = 0
    yaw: float = 0.0
    dropout: float = 0.0
    seed: int | None = None

    @property
    def bounds(self):
        return self.mesh.bounds()


def place_on_table(mesh: TriangleMesh, orientation: Pose, xy, table_height) -> Pose:
    """Translate so the lowest vertex touches the table plane."""
    z = (mesh.vertices @ orientation.R.T)[:, 2].min()
    return Pose(orientation.q, [xy[0], xy[1], table_height - z])


def sample_scene(instance: TriangleMesh, rest: list, rng, table_h_range=(0.0, 0.0), workspace=0.05,
                 camera: Camera | None = None, dropout_range=(0.0, MAX_DROPOUT), instance_id="",
                 scales=(1.0, 1.0, 1.0), seed=None, render=True) -> SyntheticScene:
    """Random rest pose, yaw, table position and height, then a partial scan.

    With ``render=False`` the partial cloud is left empty (placement only).
    """
    if len(rest) == 0:
        raise ValueError("need at least one rest pose")
    ri = int(rng.integers(len(rest)))
    yaw = float(rng.uniform(0.0, 2.0 * math.pi))
    xy = rng.uniform(-workspace, workspace, 2) if workspace > 0 else np.zeros(2)
    lo, hi = table_h_range
    height = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    pose = place_on_table(instance, Pose(yaw_quat(yaw)) @ rest[ri], xy, height)
    cam = camera or default_camera((0.0, 0.0, height))
    dropout = 0.0
    if render:
        partial = render_partial(instance, pose, cam)
        dlo, dhi = dropout_range
        dropout = float(rng.uniform(dlo, dhi)) if dhi > dlo else float(dlo)
        partial = corrupt_depth(partial, dropout, rng)
    else:
        partial = PointCloud(np.zeros((0, 3)))
    return SyntheticScene(instance, pose, height, cam, partial, instance_id, np.asarray(scales, dtype=float),
                          ri, yaw, dropout, seed)


def emit_labels(scene: SyntheticScene):
    """Ground-truth NUNOCS of the partial points and the generating 9D pose."""
    lo, hi = scene.bounds
    labels = label_points(scene.partial.points, scene.pose, (lo, hi))
    labels = NunocsCloud(labels.coords, labels.scales, scene.partial.source_indices)
    return labels, pose9d_from_model(scene.pose, hi - lo)


# ---------------------------------------------------------------------------
# demonstrations


def synth_demo_log(script: Trajectory, tracker, rng, receptacle: Pose | None = None,
                   extrinsics: Pose | None = None) -> DemoLog:
    """Camera-frame tracker log that replays ``script`` (receptacle frame) with tracker noise."""
    from .catbc import perturb

    receptacle = receptacle or default_camera().pose.inverse()
    extrinsics = extrinsics or Pose()
    xi0 = receptacle @ script[0]
    inv0 = xi0.inverse()
    rel = [Pose()]
    for pose in script.poses[1:]:
        seen = perturb(receptacle @ pose, rng, tracker.sigma_trans, tracker.sigma_rot)
        rel.append(seen @ inv0)
    return DemoLog(xi0, receptacle, extrinsics, script.times, tuple(rel))


# ---------------------------------------------------------------------------
# built-in categories and datasets

BUILTIN_CATEGORIES = {
    "gears": {
        "shape": "gear",
        "z_step_deg": 5.0,
        "models": {
            "gear_a": {"outer_radius": 0.025, "hole_radius": 0.008, "thickness": 0.008},
            "gear_b": {"outer_radius": 0.020, "hole_radius": 0.005, "thickness": 0.012},
            "gear_c": {"outer_radius": 0.030, "hole_radius": 0.012, "thickness": 0.006},
        },
    },
    "batteries": {
        "shape": "battery",
        "z_step_deg": 5.0,
        "models": {
            "battery_aa": {"radius": 0.007, "half_height": 0.025},
            "battery_c": {"radius": 0.013, "half_height": 0.025},
            "battery_aaa": {"radius": 0.005, "half_height": 0.022},
        },
    },
}


def builtin_models(category):
    spec = BUILTIN_CATEGORIES[category]
    rests = list(rest_poses(spec["shape"]).values())
    return [(mid, make_mesh(spec["shape"], **dims), rests) for mid, dims in spec["models"].items()]


def write_builtin_library(category, directory):
    """Write meshes and a ``library.cfg`` manifest loadable by ``CategoryLibrary.load``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    spec = BUILTIN_CATEGORIES[category]
    lines = ["[category]", f"name = {category}", f"z_step_deg = {spec['z_step_deg']}", ""]
    for mid, mesh, rests in builtin_models(category):
        save_obj(mesh, directory / f"{mid}.obj")
        poses = "; ".join(" ".join(repr(float(v)) for v in r.q) for r in rests)
        lines += [f"[model.{mid}]", f"mesh = {mid}.obj", f"rest_poses = {poses}", ""]
    (directory / "library.cfg").write_text("\n".join(lines))
    return directory


def generate_scene(category, master_seed, index, scale_range=DEFAULT_SCALE_RANGE, table_h_range=(0.0, 0.05),
                   dropout_range=(0.0, MAX_DROPOUT)) -> SyntheticScene:
    rng = rng_for(master_seed, index)
    models = builtin_models(category)
    mid, base, rests = models[int(rng.integers(len(models)))]
    mesh, scales = random_instance(base, rng, scale_range)
    return sample_scene(mesh, rests, rng, table_h_range=table_h_range, dropout_range=dropout_range,
                        instance_id=mid, scales=scales, seed=index)


def label_round_trip_error(labels: NunocsCloud, truth: CategoryPose9D, partial) -> float:
    """Worst of rotation angle, relative extent and translation errors of ``solve_pose9d`` on exact labels."""
    from .geom import quat_angle
    from .nunocs import solve_pose9d

    solved = solve_pose9d(labels, partial)
    got, want = solved.model_pose(), truth.model_pose()
    rot = quat_angle(got.q, want.q)
    ext = float(np.max(np.abs(solved.extents / truth.extents - 1.0)))
    trans = float(np.abs(got.t - want.t).max())
    return max(rot, ext, trans)


def write_scene(scene: SyntheticScene, directory, label_check_tol=1e-9):
    """Write ``cloud.ply``, ``labels.json`` and ``meta.json``; returns the label/solve residual."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels, truth = emit_labels(scene)
    err = label_round_trip_error(labels, truth, scene.partial)
    if err > label_check_tol:
        raise AssertionError(f"label self-check failed: {err}")
    save_ply(scene.partial.points, directory / "cloud.ply")
    (directory / "labels.json").write_text(json.dumps({
        "coords": labels.coords.tolist(), "scales": labels.scales.tolist(), "pose9d": truth.to_dict()}))
    lo, hi = scene.bounds
    (directory / "meta.json").write_text(json.dumps({
        "instance_id": scene.instance_id, "scales": [float(s) for s in scene.scales],
        "pose": scene.pose.to_dict(), "seed": scene.seed, "table_height": scene.table_height,
        "rest_index": scene.rest_index, "yaw": scene.yaw, "dropout": scene.dropout,
        "bounds": [lo.tolist(), hi.tolist()], "camera": scene.camera.to_dict()}, indent=1, sort_keys=True))
    return err
