"""Closed-loop category-level behaviour cloning against a kinematic plant.

The plant is quasi-static and friction-free: commanded pose increments are
applied to the true object pose, motions stop at first contact with the
receptacle SDF, the remaining translation slides along the contact surface
and the remaining rotation pivots on the contact (pushed out along the
normal). Tracking noise, latency, grasp slip, contact slip and scripted pushes
model the uncertainty the controller has to absorb.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .demo import Trajectory, select_symmetric_subgoal
from .errors import InvalidGeometry, PathBlocked
from .geom import (
    Pose,
    interpolate,
    quat_angles,
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_mul_many,
    quat_to_rotvec,
)

CONTACT_TOL = 1e-7
BISECT_ITERS = 60
BISECT_RESOLUTION = 1e-8
SUBSTEP_TRANS = 1e-3
SUBSTEP_ROT = math.radians(1.0)
PIVOT_ITERS = 8


# ---------------------------------------------------------------------------
# noise and disturbance models


@dataclass(frozen=True)
class TrackerModel:
    sigma_trans: float = 0.0
    sigma_rot: float = 0.0
    latency_ticks: int = 0
    rate: float = 10.0

    def __post_init__(self):
        if self.sigma_trans < 0 or self.sigma_rot < 0:
            raise ValueError("tracker noise must be non-negative")
        if self.latency_ticks < 0 or int(self.latency_ticks) != self.latency_ticks:
            raise ValueError("latency must be a non-negative integer")
        if self.rate <= 0:
            raise ValueError("tracker rate must be positive")


def random_offset(rng, sigma_trans, sigma_rot) -> Pose:
    """Gaussian pose offset; no draws are made for a zero sigma."""
    dt = rng.normal(scale=sigma_trans, size=3) if sigma_trans > 0 else np.zeros(3)
    dr = rng.normal(scale=sigma_rot, size=3) if sigma_rot > 0 else np.zeros(3)
    return Pose(quat_from_rotvec(dr), dt)


def perturb(pose: Pose, rng, sigma_trans, sigma_rot) -> Pose:
    """World-frame noise: rotate about the object origin, then shift."""
    if sigma_trans == 0 and sigma_rot == 0:
        return pose
    off = random_offset(rng, sigma_trans, sigma_rot)
    return Pose(quat_mul(off.q, pose.q), pose.t + off.t)


@dataclass(frozen=True)
class Push:
    """Scripted external push: a world-frame translation applied after the command at ``tick``."""

    tick: int
    offset: tuple


@dataclass(frozen=True)
class DisturbanceModel:
    grasp_slip_trans: float = 0.0
    grasp_slip_rot: float = 0.0
    contact_slip_trans: float = 0.0
    contact_slip_rot: float = 0.0
    pushes: tuple = ()
    grasp_slip: Pose | None = None

    def __post_init__(self):
        for v in (self.grasp_slip_trans, self.grasp_slip_rot, self.contact_slip_trans, self.contact_slip_rot):
            if v < 0:
                raise ValueError("disturbance sigmas must be non-negative")
        ticks = [p.tick for p in self.pushes]
        if ticks != sorted(ticks):
            raise ValueError("scripted pushes must be sorted by tick")

    def sample_grasp_slip(self, rng) -> Pose:
        """Object-frame slip ``E`` with ``true = believed . E``."""
        if self.grasp_slip is not None:
            return self.grasp_slip
        return random_offset(rng, self.grasp_slip_trans, self.grasp_slip_rot)


@dataclass(frozen=True)
class ControlParams:
    goal_tol_trans: float = 5e-4
    goal_tol_rot: float = math.radians(0.5)
    max_step_trans: float = 1e-3
    max_step_rot: float = math.radians(1.0)
    timeout_ticks: int | None = None
    feasibility_tol: float = 1e-3

    def timeout_for(self, n_subgoals):
        return self.timeout_ticks if self.timeout_ticks is not None else 50 * n_subgoals


# ---------------------------------------------------------------------------
# plant


class PlantState:
    """True object pose plus the contact model and disturbance streams.

    ``model_points`` are object-frame collision samples; ``scene`` is the
    receptacle SDF in the same (receptacle) frame as the poses.
    """

    def __init__(self, scene, model_points, true_pose: Pose, disturbance: DisturbanceModel | None = None,
                 rng=None):
        self.scene = scene
        self.points = np.asarray(getattr(model_points, "points", model_points), dtype=np.float64)
        self.true = true_pose
        self.believed = true_pose
        self.disturbance = disturbance or DisturbanceModel()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.in_contact = False
        self.tick = 0
        self._pushes = deque(self.disturbance.pushes)
        self._radius = float(np.linalg.norm(self.points, axis=1).max()) if len(self.points) else 0.0

    def min_sdf(self, pose: Pose, points=None) -> float:
        pts = self.points if points is None else points
        return self.scene.posed_min(pts, pose)[0]

    def _bisect(self, a: Pose, b: Pose, floor, pts):
        """Last feasible and first infeasible fractions of the a->b motion."""
        span = float(np.linalg.norm(b.t - a.t)) + self._radius * float(quat_angles(a.q, b.q[None])[0])
        lo, hi = 0.0, 1.0
        for _ in range(BISECT_ITERS):
            if (hi - lo) * span <= BISECT_RESOLUTION:
                break
            mid = 0.5 * (lo + hi)
            if self.min_sdf(interpolate(a, b, mid), pts) >= floor:
                lo = mid
            else:
                hi = mid
        return lo, hi

    def _contact_normal(self, pose: Pose, pts):
        _, k = self.scene.posed_min(pts, pose)
        return self.scene.gradient(pose.apply(pts[k:k + 1]))[0]

    def _pivot(self, pose: Pose, q, floor, pts, budget):
        """Apply the remaining rotation, then push out along the contact normal.

        The push may not exceed ``budget`` (the largest point displacement the
        rotation causes); otherwise the rotation is dropped (returns None).
        """
        cand = Pose(q, pose.t)
        pushed = 0.0
        for _ in range(PIVOT_ITERS):
            value, k = self.scene.posed_min(pts, cand)
            if value >= floor:
                return cand
            pushed -= value
            if pushed > budget:
                return None
            normal = self.scene.gradient(cand.apply(pts[k:k + 1]))[0]
            cand = Pose(cand.q, cand.t - value * normal)
        return None

    def move_to(self, target: Pose) -> bool:
        """Move toward ``target``; returns True when contact stopped or deflected the motion."""
        start = self.true
        here = self.scene.posed_sdf(self.points, start)
        floor = min(-CONTACT_TOL, float(here.min()))
        trans = float(np.linalg.norm(target.t - start.t))
        rot = float(quat_angles(start.q, target.q[None])[0])
        # SDF is 1-Lipschitz: points farther than the largest point displacement cannot touch
        reach = 2.0 * (trans + rot * self._radius) + 1e-4
        pts = self.points[here <= reach]
        if len(pts) == 0:
            self.true = target
            return False
        n = max(1, int(math.ceil(max(trans / SUBSTEP_TRANS, rot / SUBSTEP_ROT) - 1e-9)))
        prev = start
        for i in range(1, n + 1):
            nxt = target if i == n else interpolate(start, target, i / n)
            if self.min_sdf(nxt, pts) >= floor:
                prev = nxt
                continue
            lo, hi = self._bisect(prev, nxt, floor, pts)
            stop = interpolate(prev, nxt, lo) if lo > 0 else prev
            normal = self._contact_normal(interpolate(prev, nxt, hi), pts)
            rest = target.t - stop.t
            into = float(rest @ normal)
            if into < 0:
                rest = rest - into * normal
            slide = Pose(stop.q, stop.t + rest)
            if self.min_sdf(slide, pts) >= floor:
                stop = slide
            else:
                lo, _ = self._bisect(stop, slide, floor, pts)
                if lo > 0:
                    stop = interpolate(stop, slide, lo)
            remaining = float(quat_angles(stop.q, target.q[None])[0])
            if remaining > 0.0:
                pivoted = self._pivot(stop, target.q, floor, pts, remaining * self._radius + 1e-6)
                if pivoted is not None:
                    stop = pivoted
            self.true = stop
            return True
        self.true = target
        return False

    def step(self, command: Pose):
        """Apply a left-multiplied increment, then disturbances; advances the tick."""
        contact = self.move_to(command @ self.true)
        while self._pushes and self._pushes[0].tick < self.tick:
            self._pushes.popleft()
        while self._pushes and self._pushes[0].tick == self.tick:
            push = self._pushes.popleft()
            contact |= self.move_to(Pose(self.true.q, self.true.t + np.asarray(push.offset, dtype=float)))
        d = self.disturbance
        if contact and (d.contact_slip_trans > 0 or d.contact_slip_rot > 0):
            slip = random_offset(self.rng, d.contact_slip_trans, d.contact_slip_rot)
            contact |= self.move_to(self.true @ slip)
        self.in_contact = contact
        self.tick += 1
        return contact


class TrackerBuffer:
    """Noisy observations delayed by ``latency_ticks``; the reading at tick k is the capture of tick k-L."""

    def __init__(self, tracker: TrackerModel, rng):
        self.tracker = tracker
        self.rng = rng
        self.captures = []

    def observe(self, tick, true_pose: Pose) -> Pose:
        if tick != len(self.captures):
            raise ValueError("observations must be taken once per tick, in order")
        self.captures.append(perturb(true_pose, self.rng, self.tracker.sigma_trans, self.tracker.sigma_rot))
        return self.captures[max(0, tick - self.tracker.latency_ticks)]


# ---------------------------------------------------------------------------
# controller


@dataclass(frozen=True)
class TraceRecord:
    tick: int
    true: Pose
    believed: Pose
    subgoal: int
    contact: bool

    def to_dict(self):
        return {"tick": self.tick, "true": self.true.to_dict(), "believed": self.believed.to_dict(),
                "subgoal": self.subgoal, "contact": self.contact}


@dataclass(eq=False)
class StepResult:
    subgoal_index: int
    ticks: int
    final_pose: Pose
    reached: bool
    timed_out: bool
    final_err_trans: float
    final_err_rot: float
    trace: list = field(default_factory=list)
    success: bool | None = None
    diagnostics: dict = field(default_factory=dict)


def pose_increment(est: Pose, goal: Pose, params: ControlParams) -> Pose:
    """Increment ``D`` (left-multiplied) rotating about the object origin, capped per tick.

    Translation and rotation are shortened by the same factor, so the object
    moves along the straight segment toward the goal.
    """
    rv = quat_to_rotvec(quat_mul(goal.q, quat_conj(est.q)))
    dt = goal.t - est.t
    ang = float(np.linalg.norm(rv))
    n = float(np.linalg.norm(dt))
    f = 1.0
    if ang > params.max_step_rot:
        f = params.max_step_rot / ang
    if n > params.max_step_trans:
        f = min(f, params.max_step_trans / n)
    if f < 1.0:
        rv, dt = rv * f, dt * f
    rot = Pose(quat_from_rotvec(rv))
    return Pose(rot.q, est.t + dt - rot.R @ est.t)


def within(est: Pose, goal: Pose, params: ControlParams) -> bool:
    return (float(np.linalg.norm(est.t - goal.t)) <= params.goal_tol_trans
            and float(quat_angles(est.q, goal.q[None])[0]) <= params.goal_tol_rot)


def symmetric_error(pose: Pose, goal: Pose, sym):
    """(translation, rotation) error to the closest symmetry-equivalent form of ``goal``."""
    rot = float(quat_angles(pose.q, quat_mul_many(goal.q, sym.rotations)).min())
    return float(np.linalg.norm(pose.t - goal.t)), rot


def _control_loop(target: Trajectory, plant: PlantState, sym, params: ControlParams, read_belief, latency=0):
    params = params or ControlParams()
    n = len(target)
    timeout = params.timeout_for(n)
    pts = plant.points

    def feasible(p):
        return plant.scene.posed_min(pts, p)[0] >= -params.feasibility_tol

    recent = deque(maxlen=latency) if latency > 0 else None
    idx, trace, reached = 0, [], False
    belief = None
    for k in range(timeout):
        belief = read_belief(k)
        est = belief
        if recent:
            # replay commands issued since the delayed capture
            for d in recent:
                est = d @ est
        goal = select_symmetric_subgoal(est, target[idx], sym, feasible)
        while within(est, goal, params):
            if idx == n - 1:
                reached = True
                break
            idx += 1
            goal = select_symmetric_subgoal(est, target[idx], sym, feasible)
        if reached:
            break
        command = pose_increment(est, goal, params)
        contact = plant.step(command)
        if recent is not None:
            recent.append(command)
        plant.believed = belief
        trace.append(TraceRecord(k, plant.true, belief, idx, contact))
        yield command
    err_t, err_r = symmetric_error(plant.true, target[-1], sym)
    yield StepResult(idx, len(trace), plant.true, reached, not reached, err_t, err_r, trace)


def _drain(gen):
    out = None
    for out in gen:
        pass
    return out


def run_catbc(target: Trajectory, plant: PlantState, tracker: TrackerModel, sym, params: ControlParams | None = None,
              rng=None) -> StepResult:
    """Closed loop: the controller sees delayed, noisy captures of the true pose."""
    buf = TrackerBuffer(tracker, rng if rng is not None else np.random.default_rng(0))
    return _drain(_control_loop(target, plant, sym, params or ControlParams(),
                                lambda k: buf.observe(k, plant.true), tracker.latency_ticks))


def run_open_loop(target: Trajectory, plant: PlantState, sym, params: ControlParams | None = None,
                  start_belief: Pose | None = None) -> StepResult:
    """Open loop: the belief is the commanded kinematic pose, blind to slip and contact."""
    state = {"belief": start_belief if start_belief is not None else target[0]}

    def read(k):
        return state["belief"]

    gen = _control_loop(target, plant, sym, params or ControlParams(), read)
    out = None
    for out in gen:
        if isinstance(out, Pose):
            state["belief"] = out @ state["belief"]
    return out


def write_trace(result: StepResult, path_or_fh):
    own = isinstance(path_or_fh, (str, bytes)) or hasattr(path_or_fh, "__fspath__")
    fh = open(path_or_fh, "w") if own else path_or_fh
    try:
        for rec in result.trace:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# transport


def transport_to_keypose(start: Pose, keypose: Pose, scene, obstacles=None, model_points=None,
                         lift_heights=(0.05, 0.1, 0.15, 0.2, 0.3), step=1e-3, dt=0.1) -> Trajectory:
    """Lift, translate and lower; every sample at most ``step`` apart must have positive SDF."""
    pts = np.zeros((1, 3)) if model_points is None else np.asarray(
        getattr(model_points, "points", model_points), dtype=np.float64)
    prims = list(scene.primitives) + (list(obstacles.primitives) if obstacles is not None else [])
    from .attention import SdfScene

    world = SdfScene(prims)

    def clear(p):
        return world.posed_min(pts, p)[0] > 0.0

    base = max(start.t[2], keypose.t[2])
    for h in lift_heights:
        up = Pose(start.q, [start.t[0], start.t[1], base + h])
        over = Pose(keypose.q, [keypose.t[0], keypose.t[1], base + h])
        path = [start]
        for a, b in ((start, up), (up, over), (over, keypose)):
            rot = float(quat_angles(a.q, b.q[None])[0])
            n = max(1, int(math.ceil(max(np.linalg.norm(b.t - a.t) / step, rot / SUBSTEP_ROT))))
            path += [interpolate(a, b, i / n) for i in range(1, n + 1)]
        if all(clear(p) for p in path):
            return Trajectory.from_poses(path, dt)
    raise PathBlocked("no lift height gives a collision-free transport path")


# ---------------------------------------------------------------------------
# task checkers


@dataclass(frozen=True)
class InsertionGeometry:
    hole_radius: float
    shaft_radius: float
    thickness: float
    shaft_top: float
    axis_xy: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.shaft_radius > 0 and self.thickness > 0):
            raise InvalidGeometry("shaft radius and gear thickness must be positive")
        if self.shaft_radius >= self.hole_radius:
            raise InvalidGeometry("shaft does not fit through the hole")

    @property
    def clearance(self):
        return self.hole_radius - self.shaft_radius


@dataclass(frozen=True)
class StandingGeometry:
    radius: float
    half_height: float
    platform_radius: float
    platform_top: float = 0.0
    max_gap: float = 0.01

    def __post_init__(self):
        if min(self.radius, self.half_height, self.platform_radius) <= 0:
            raise InvalidGeometry("standing geometry needs positive dimensions")


@dataclass(frozen=True)
class AssemblyGeometry:
    """Battery tray along x with the spring on the -x wall; spring is a 1D model only."""

    radius: float
    half_length: float
    inner_min_x: float
    inner_max_x: float
    wall_top: float
    floor_z: float = 0.0
    channel_half_width: float = 0.01
    spring_natural: float = 0.016
    spring_max_at_clear: float = 0.008
    max_final_tilt: float = math.radians(5.0)

    def __post_init__(self):
        if min(self.radius, self.half_length, self.spring_natural) <= 0 or self.inner_max_x <= self.inner_min_x:
            raise InvalidGeometry("assembly geometry needs positive dimensions")
        if 2 * self.radius > 2 * self.channel_half_width:
            raise InvalidGeometry("battery wider than the tray channel")

    @property
    def inner_length(self):
        return self.inner_max_x - self.inner_min_x


def _axis(pose: Pose):
    return pose.R[:, 2]


def _tilt_from_vertical(pose: Pose):
    return math.acos(min(1.0, abs(float(_axis(pose)[2]))))


def check_insertion(pose: Pose, g: InsertionGeometry):
    tilt = _tilt_from_vertical(pose)
    lateral = math.hypot(pose.t[0] - g.axis_xy[0], pose.t[1] - g.axis_xy[1])
    misfit = lateral + g.thickness * math.sin(tilt)
    top = float(pose.t[2]) + 0.5 * g.thickness * abs(float(_axis(pose)[2]))
    ok = misfit <= g.clearance and top <= g.shaft_top
    return ok, {"lateral": lateral, "tilt": tilt, "misfit": misfit, "clearance": g.clearance,
                "gear_top": top, "engaged": top <= g.shaft_top}


def check_standing(pose: Pose, g: StandingGeometry):
    a = _axis(pose)
    tilt = _tilt_from_vertical(pose)
    end = pose.t - g.half_height * a if a[2] >= 0 else pose.t + g.half_height * a
    offset = math.hypot(end[0], end[1])
    gap = float(end[2]) - g.platform_top
    ok = tilt <= math.atan(g.radius / g.half_height) and offset <= g.platform_radius and -1e-6 <= gap <= g.max_gap
    return ok, {"tilt": tilt, "base_offset": offset, "gap": gap}


def _negative_extreme_x(pose: Pose, g: AssemblyGeometry):
    a = _axis(pose)
    c = pose.t - g.half_length * a
    return float(c[0]) - g.radius * math.sqrt(max(0.0, 1.0 - float(a[0]) ** 2))


def _positive_low_z(pose: Pose, g: AssemblyGeometry):
    a = _axis(pose)
    c = pose.t + g.half_length * a
    return float(c[2]) - g.radius * math.sqrt(max(0.0, 1.0 - float(a[2]) ** 2))


def spring_length(pose: Pose, g: AssemblyGeometry):
    return min(g.spring_natural, max(0.0, _negative_extreme_x(pose, g) - g.inner_min_x))


def check_assembly(poses, g: AssemblyGeometry):
    """``poses`` is the executed pose sequence; the last entry is the release pose."""
    poses = list(poses)
    clear_tick, spring_at_clear = None, None
    for k, p in enumerate(poses):
        if _positive_low_z(p, g) <= g.wall_top:
            clear_tick, spring_at_clear = k, spring_length(p, g)
            break
    final = poses[-1]
    a = _axis(final)
    tilt_from_horizontal = math.asin(min(1.0, abs(float(a[2]))))
    equilibrium = g.inner_length - 2 * g.half_length
    lying = (tilt_from_horizontal <= g.max_final_tilt and abs(float(final.t[1])) + g.radius <= g.channel_half_width
             and float(final.t[2]) - g.radius <= g.floor_z + 1e-3
             and g.inner_min_x <= float(final.t[0]) <= g.inner_max_x)
    pressed = spring_at_clear is not None and spring_at_clear <= g.spring_max_at_clear
    fits = 0.0 <= equilibrium < g.spring_natural
    return pressed and lying and fits, {
        "clear_tick": clear_tick, "spring_at_clear": spring_at_clear, "equilibrium_spring": equilibrium,
        "pressed": pressed, "lying": lying, "fits": fits}


def check_success(task, final_state, geometry):
    """Geometric success for ``standing``, ``insertion`` or ``assembly``; returns (ok, diagnostics).

    ``final_state`` is a Pose, a StepResult, or (assembly) a sequence of poses.
    """
    if isinstance(final_state, StepResult):
        poses = [r.true for r in final_state.trace] or [final_state.final_pose]
        final = final_state.final_pose
    elif isinstance(final_state, Pose):
        poses, final = [final_state], final_state
    else:
        poses = list(final_state)
        final = poses[-1]
    if task == "insertion":
        return check_insertion(final, geometry)
    if task == "standing":
        return check_standing(final, geometry)
    if task == "assembly":
        return check_assembly(poses, geometry)
    raise ValueError(f"unknown task {task!r}")
