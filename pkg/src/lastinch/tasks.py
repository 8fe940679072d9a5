"""Built-in desk-scale tasks: receptacle scenes, scripted demonstrations and checker geometry.

All poses are in the receptacle frame (+z up, receptacle top surface at z = 0).
Demonstration scripts are dense (about 1 mm or 1 degree between frames).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import SdfScene, box, cylinder
from .catbc import AssemblyGeometry, InsertionGeometry, StandingGeometry
from .demo import Trajectory
from .geom import Pose, interpolate, quat_angle, quat_from_axis_angle, yaw_quat
from .nunocs import SymmetryGroup
from .shapes import make_mesh

FRAME_STEP = 1e-3
FRAME_ROT = math.radians(1.0)

GEAR_BASE = {"outer_radius": 0.025, "hole_radius": 0.008, "thickness": 0.008}
BATTERY_BASE = {"radius": 0.007, "half_height": 0.025}
SHAFT_HEIGHT = 0.03
ROLL_HOVER = 2e-4


def dense_path(waypoints, dt=0.1) -> Trajectory:
    """Piecewise interpolation with frames at most ``FRAME_STEP`` / ``FRAME_ROT`` apart."""
    poses = [waypoints[0]]
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        n = max(1, int(math.ceil(max(np.linalg.norm(b.t - a.t) / FRAME_STEP, quat_angle(a.q, b.q) / FRAME_ROT))))
        poses += [interpolate(a, b, i / n) for i in range(1, n + 1)]
    return Trajectory.from_poses(poses, dt)


def scaled_dims(shape, dims, scales=(1.0, 1.0, 1.0)):
    """Effective dimensions after per-axis scaling (x and y must match for round parts)."""
    sx, sy, sz = scales
    if not math.isclose(sx, sy, rel_tol=1e-12):
        raise ValueError("round parts need equal x and y scales")
    if shape == "gear":
        return {"outer_radius": dims["outer_radius"] * sx, "hole_radius": dims["hole_radius"] * sx,
                "thickness": dims["thickness"] * sz}
    if shape == "battery":
        return {"radius": dims["radius"] * sx, "half_height": dims["half_height"] * sz}
    raise ValueError(f"unknown shape {shape!r}")


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    kind: str
    shape: str
    category: str
    scene: SdfScene
    demo_dims: dict
    demo_script: Trajectory
    symmetry: SymmetryGroup
    params: dict

    @property
    def demo_mesh(self):
        return make_mesh(self.shape, **self.demo_dims)

    def geometry_for(self, dims):
        p = self.params
        if self.kind == "insertion":
            return InsertionGeometry(dims["hole_radius"], p["shaft_radius"], dims["thickness"], SHAFT_HEIGHT)
        if self.kind == "standing":
            return StandingGeometry(dims["radius"], dims["half_height"], p["platform_radius"])
        if self.kind == "assembly":
            return AssemblyGeometry(dims["radius"], dims["half_height"], p["inner_min_x"], p["inner_max_x"],
                                    p["wall_top"], 0.0, p["channel_half_width"])
        raise ValueError(self.kind)


def insertion_task(clearance=0.0005, gear=None) -> TaskSpec:
    gear = dict(GEAR_BASE if gear is None else gear)
    r_shaft = gear["hole_radius"] - clearance
    scene = SdfScene([
        box([0, 0, -0.005], [0.06, 0.06, 0.005], name="base"),
        cylinder([0, 0, 0.5 * SHAFT_HEIGHT], r_shaft, 0.5 * SHAFT_HEIGHT, name="shaft"),
    ])
    h = 0.5 * gear["thickness"]
    seat = Pose(t=[0, 0, h])
    script = dense_path([
        Pose(yaw_quat(math.radians(40)), [0.08, -0.05, 0.16]),
        Pose(t=[0, 0, 0.13]),
        seat,
    ])
    return TaskSpec(f"insertion_{clearance * 1e3:g}mm", "insertion", "gear", "gears", scene, gear, script,
                    SymmetryGroup.z_rotations(5), {"shaft_radius": r_shaft, "clearance": clearance})


def standing_task(battery=None, platform_radius=0.02) -> TaskSpec:
    battery = dict(BATTERY_BASE if battery is None else battery)
    scene = SdfScene([cylinder([0, 0, -0.01], platform_radius, 0.01, name="platform")])
    lying = quat_from_axis_angle([1, 0, 0], math.pi / 2)
    script = dense_path([
        Pose(lying, [0.06, 0.04, 0.15]),
        Pose(t=[0, 0, 0.12]),
        Pose(t=[0, 0, battery["half_height"]]),
    ])
    return TaskSpec("standing", "standing", "battery", "batteries", scene, battery, script,
                    SymmetryGroup.z_rotations(5), {"platform_radius": platform_radius})


def assembly_pose(tilt, neg_x, r, h, lift=0.0):
    """Battery along +x tilted up by ``tilt``; negative cap's -x extreme at ``neg_x``, lowest rim ``lift`` above the floor."""
    q = quat_from_axis_angle([0, 1, 0], math.pi / 2 - tilt)
    a = np.array([math.cos(tilt), 0.0, math.sin(tilt)])
    c_neg = np.array([neg_x + r * math.sin(tilt), 0.0, r * math.cos(tilt) + lift])
    return Pose(q, c_neg + h * a)


def assembly_task(battery=None, tilt_deg=25.0, press_to=0.005) -> TaskSpec:
    battery = dict(BATTERY_BASE if battery is None else battery)
    r, h = battery["radius"], battery["half_height"]
    inner_min, inner_max = -0.029, 0.029
    chw, wall_top, wt = 0.009, 0.012, 0.0025
    scene = SdfScene([
        box([0, 0, -0.005], [0.06, 0.04, 0.005], name="floor"),
        box([inner_min - 0.5 * wt, 0, 0.5 * wall_top], [0.5 * wt, chw + wt, 0.5 * wall_top], name="spring_wall"),
        box([inner_max + 0.5 * wt, 0, 0.5 * wall_top], [0.5 * wt, chw + wt, 0.5 * wall_top], name="end_wall"),
        box([0, chw + 0.5 * wt, 0.5 * wall_top], [inner_max + wt, 0.5 * wt, 0.5 * wall_top], name="side_wall_a"),
        box([0, -chw - 0.5 * wt, 0.5 * wall_top], [inner_max + wt, 0.5 * wt, 0.5 * wall_top], name="side_wall_b"),
    ])
    tilt = math.radians(tilt_deg)
    touch = inner_min + 0.016
    above = assembly_pose(tilt, touch, r, h)
    waypoints = [Pose(above.q, above.t + [0.03, 0.0, 0.12]), Pose(above.q, above.t + [0.0, 0.0, 0.06]), above,
                 assembly_pose(tilt, inner_min + press_to, r, h)]
    # roll down about the negative cap with the rim just above the floor and the spring pressed, then set down
    n_roll = int(math.ceil(tilt_deg / 0.25))
    for k in range(1, n_roll + 1):
        waypoints.append(assembly_pose(tilt * (1 - k / n_roll), inner_min + press_to, r, h, ROLL_HOVER))
    waypoints.append(assembly_pose(0.0, inner_min + press_to, r, h))
    return TaskSpec("assembly", "assembly", "battery", "batteries", scene, battery, dense_path(waypoints),
                    SymmetryGroup.trivial(),
                    {"inner_min_x": inner_min, "inner_max_x": inner_max, "wall_top": wall_top,
                     "channel_half_width": chw})


def make_task(name, **kw) -> TaskSpec:
    if name == "insertion":
        return insertion_task(**kw)
    if name == "standing":
        return standing_task(**kw)
    if name == "assembly":
        return assembly_task(**kw)
    raise ValueError(f"unknown task {name!r}")
