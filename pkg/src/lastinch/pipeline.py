"""Scenario orchestration: demo -> scan -> 9D estimate -> reprojection -> seeded runs.

Everything a scenario needs is computed once by ``prepare`` (deterministic in
the master seed); ``run_seed`` then executes one seeded trial. Within the
plant, poses describe the *estimated* model frame and the collision points
carry the estimation error, so the controller and the tracker share one frame
while the checkers see the true instance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catbc import (
    ControlParams,
    DisturbanceModel,
    PlantState,
    Push,
    StepResult,
    TrackerModel,
    check_success,
    run_catbc,
    run_open_loop,
    symmetric_error,
    transport_to_keypose,
)
from .correspond import DenseCorrespondence, build_correspondence, reproject_trajectory
from .errors import NoFeasibleSubgoal
from .demo import Trajectory, detect_keypose, discretize, parse_demo
from .geom import Pose, sample_surface
from .nunocs import (
    CategoryLibrary,
    CategoryPose9D,
    SymmetryGroup,
    Template,
    match_nunocs,
    predict_nunocs,
    solve_pose9d,
)
from .seeding import rng_for
from .simgen import BUILTIN_CATEGORIES, SyntheticScene, sample_scene, synth_demo_log
from .shapes import make_mesh, rest_poses
from .tasks import TaskSpec, make_task, scaled_dims

TEMPLATE_SPACING = 0.002
# stream indices under the master seed (per-run streams use the run seed instead)
DEMO_STREAM, SCENE_STREAM = 10, 11
GRASP_STREAM, TRACKER_STREAM, CONTACT_STREAM = 0, 1, 2
# table area in the receptacle frame where the novel object starts
TABLE_OFFSET = np.array([-0.15, 0.10, 0.0])


def category_symmetry(category) -> SymmetryGroup:
    step = BUILTIN_CATEGORIES[category]["z_step_deg"]
    return SymmetryGroup.z_rotations(step) if step > 0 else SymmetryGroup.trivial()


def builtin_library(category, spacing=TEMPLATE_SPACING) -> CategoryLibrary:
    spec = BUILTIN_CATEGORIES[category]
    rests = list(rest_poses(spec["shape"]).values())
    templates = [Template(mid, make_mesh(spec["shape"], **dims), rests, spacing)
                 for mid, dims in spec["models"].items()]
    return CategoryLibrary(category, category_symmetry(category), templates)


def task_for(cfg, dims) -> TaskSpec:
    if cfg.task == "insertion":
        return make_task("insertion", clearance=cfg.clearance, gear=dims)
    if cfg.task == "standing":
        return make_task("standing", battery=dims, platform_radius=cfg.platform_radius)
    return make_task("assembly", battery=dims)


def model_dims(cfg, model_id, scales=(1.0, 1.0, 1.0)):
    spec = BUILTIN_CATEGORIES[cfg.category]
    return scaled_dims(spec["shape"], spec["models"][model_id], scales)


# ---------------------------------------------------------------------------
# stages


def make_demo_log(cfg):
    dims = model_dims(cfg, cfg.demo_model_id)
    demo_task = task_for(cfg, dims)
    tracker = TrackerModel(cfg.demo_sigma_trans, cfg.demo_sigma_rot)
    return synth_demo_log(demo_task.demo_script, tracker, rng_for(cfg.seed, DEMO_STREAM))


def make_scene(cfg) -> SyntheticScene:
    """The novel instance resting on the table, scanned from the default camera."""
    spec = BUILTIN_CATEGORIES[cfg.category]
    dims = model_dims(cfg, cfg.model_id, cfg.scales)
    mesh = make_mesh(spec["shape"], **dims)
    rests = list(rest_poses(spec["shape"]).values())
    return sample_scene(mesh, rests, rng_for(cfg.seed, SCENE_STREAM), table_h_range=(0.0, 0.05),
                        instance_id=cfg.model_id, scales=cfg.scales, seed=cfg.seed)


@dataclass(frozen=True, eq=False)
class Estimate:
    """9D estimate of the novel instance plus the template whose NUNOCS completes its shape."""

    pose9d: CategoryPose9D
    template_id: str
    mode: str

    def to_dict(self):
        return {"pose9d": self.pose9d.to_dict(), "template": self.template_id, "mode": self.mode}

    @classmethod
    def from_dict(cls, d):
        return cls(CategoryPose9D.from_dict(d["pose9d"]), d["template"], d["mode"])


def estimate(cfg, partial, truth=None, library=None, viewpoint=None) -> Estimate:
    """NUNOCS prediction then the closed-form 9D solve.

    ``truth`` is ``(model_pose, bounds)`` for the oracle predictor.
    """
    if cfg.predictor == "oracle":
        pred = predict_nunocs(partial, mode="oracle", truth=truth)
        return Estimate(solve_pose9d(pred, partial), cfg.model_id, "oracle")
    library = library or builtin_library(cfg.category)
    pred, m = match_nunocs(partial, library, viewpoint)
    return Estimate(solve_pose9d(pred, partial), library.templates[m.template_index].model_id, "matcher")


@dataclass(frozen=True, eq=False)
class Reprojection:
    full: Trajectory
    target: Trajectory
    keypose_index: int
    anchors: list
    corr: DenseCorrespondence
    novel_points: np.ndarray


def canonical_points(cfg, model_id, extents=None):
    """Template surface samples and their NUNOCS; rescaled to ``extents`` when given (box-centred)."""
    lib_spec = BUILTIN_CATEGORIES[cfg.category]
    mesh = make_mesh(lib_spec["shape"], **lib_spec["models"][model_id])
    tmpl = Template(model_id, mesh, [Pose()], TEMPLATE_SPACING)
    if extents is None:
        return tmpl.points.points, tmpl.nunocs
    ext = np.asarray(extents, dtype=np.float64)
    return tmpl.nunocs.coords * ext - 0.5 * ext, tmpl.nunocs


def reproject(cfg, demo_traj: Trajectory, est: Estimate) -> Reprojection:
    demo_dims = model_dims(cfg, cfg.demo_model_id)
    demo_scene = task_for(cfg, demo_dims).scene
    novel_scene = task_for(cfg, model_dims(cfg, cfg.model_id, cfg.scales)).scene
    demo_pts, demo_nc = canonical_points(cfg, cfg.demo_model_id)
    novel_pts, novel_nc = canonical_points(cfg, est.template_id, est.pose9d.extents)
    corr = build_correspondence(demo_nc, novel_nc)
    mode = "centroid" if cfg.policy == "centroid" else "anchored"
    full, anchors = reproject_trajectory(demo_traj, demo_pts, novel_pts, corr, demo_scene, mode=mode)
    k = detect_keypose(full, novel_pts, novel_scene, cfg.keypose_distance)
    target = discretize(full.subset(range(k, len(full))), cfg.d_min, cfg.theta_min)
    return Reprojection(full, target, k, anchors, corr, novel_pts)


@dataclass(frozen=True, eq=False)
class Prepared:
    cfg: object
    task: TaskSpec
    geometry: object
    scene: SyntheticScene
    estimate: Estimate
    demo: Trajectory
    reprojection: Reprojection
    est_error: Pose
    plant_points: np.ndarray
    transport: Trajectory | None
    symmetry: SymmetryGroup

    @property
    def target(self):
        return self.reprojection.target


def estimation_error(scene_pose: Pose, est: Estimate) -> Pose:
    """``E`` with ``true_model_pose = estimated_frame_pose . E``."""
    return est.pose9d.model_pose().inverse() @ scene_pose


def assemble(cfg, scene: SyntheticScene, est: Estimate, demo_traj: Trajectory, rep: Reprojection) -> Prepared:
    dims = model_dims(cfg, cfg.model_id, cfg.scales)
    task = task_for(cfg, dims)
    err = estimation_error(scene.pose, est)
    true_pts = sample_surface(scene.mesh, cfg.point_spacing).points
    plant_pts = err.apply(true_pts)
    start = Pose(est.pose9d.model_pose().q, est.pose9d.model_pose().t + TABLE_OFFSET)
    transport = transport_to_keypose(start, rep.target[0], task.scene, None, rep.novel_points,
                                     lift_heights=cfg.lift_heights)
    return Prepared(cfg, task, task.geometry_for(dims), scene, est, demo_traj, rep, err, plant_pts, transport,
                    category_symmetry(cfg.category))


def prepare(cfg) -> Prepared:
    """Run every per-scenario stage in memory."""
    demo_traj = parse_demo(make_demo_log(cfg))
    scene = make_scene(cfg)
    est = estimate(cfg, scene.partial, truth=(scene.pose, scene.mesh.bounds()),
                   viewpoint=scene.camera.pose.t)
    return assemble(cfg, scene, est, demo_traj, reproject(cfg, demo_traj, est))


# ---------------------------------------------------------------------------
# seeded runs


@dataclass(frozen=True, eq=False)
class RunOutcome:
    scenario: str
    seed: int
    policy: str
    success: bool
    result: StepResult
    error: str = ""

    def row(self):
        r = self.result
        return {"scenario": self.scenario, "seed": self.seed, "policy": self.policy, "success": int(self.success),
                "ticks": r.ticks, "final_err_mm": f"{r.final_err_trans * 1e3:.6f}",
                "final_err_deg": f"{math.degrees(r.final_err_rot):.6f}"}


def control_params(cfg) -> ControlParams:
    return ControlParams(cfg.goal_tol_trans, cfg.goal_tol_rot, cfg.max_step_trans, cfg.max_step_rot,
                         cfg.timeout_ticks or None)


def disturbance(cfg) -> DisturbanceModel:
    pushes = (Push(cfg.push_tick, tuple(cfg.push_offset)),) if cfg.push_tick >= 0 else ()
    return DisturbanceModel(cfg.grasp_slip_trans, cfg.grasp_slip_rot, cfg.contact_slip_trans, cfg.contact_slip_rot,
                            pushes)


def run_seed(prep: Prepared, seed: int, policy: str | None = None, cfg=None) -> RunOutcome:
    """One trial; ``cfg`` may override noise/disturbance/control fields of the prepared scenario."""
    cfg = cfg or prep.cfg
    policy = policy or cfg.policy
    dist = disturbance(cfg)
    target = prep.target
    slip = dist.sample_grasp_slip(rng_for(seed, GRASP_STREAM))
    plant = PlantState(prep.task.scene, prep.plant_points, target[0] @ slip, dist, rng_for(seed, CONTACT_STREAM))
    params = control_params(cfg)
    try:
        if policy == "open":
            result = run_open_loop(target, plant, prep.symmetry, params)
        else:
            tracker = TrackerModel(cfg.sigma_trans, cfg.sigma_rot, cfg.latency_ticks)
            result = run_catbc(target, plant, tracker, prep.symmetry, params, rng_for(seed, TRACKER_STREAM))
    except NoFeasibleSubgoal as exc:
        # a trial that cannot continue is a failed trial, not a failed batch
        err_t, err_r = symmetric_error(plant.true, target[-1], prep.symmetry)
        result = StepResult(-1, plant.tick, plant.true, False, False, err_t, err_r)
        return RunOutcome(cfg.name, int(seed), policy, False, result, str(exc))
    err = prep.est_error
    poses = [rec.true @ err for rec in result.trace] or [result.final_pose @ err]
    ok, diag = check_success(prep.task.kind, poses, prep.geometry)
    result.success = bool(ok)
    result.diagnostics = diag
    return RunOutcome(cfg.name, int(seed), policy, bool(ok), result)


def run_seeds(prep: Prepared, seeds, policy=None, cfg=None, jobs=1):
    """Trials for many seeds; results come back sorted by seed whatever the worker count."""
    seeds = list(seeds)
    if jobs <= 1:
        out = [run_seed(prep, s, policy, cfg) for s in seeds]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(lambda s: run_seed(prep, s, policy, cfg), seeds))
    return sorted(out, key=lambda o: (o.scenario, o.seed, o.policy))


def seeds_for(cfg):
    return range(cfg.seed, cfg.seed + cfg.runs)


def success_rate(outcomes):
    outcomes = list(outcomes)
    return sum(o.success for o in outcomes) / len(outcomes) if outcomes else float("nan")

