"""Demonstration ingestion: frame conversion, keyposes, discretization, symmetric subgoals."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrajectory, FrameChainError, NoFeasibleSubgoal
from .geom import Pose, quat_angle, quat_angles, quat_mul_many

DEFAULT_KEYPOSE_DISTANCE = 0.05
DEFAULT_D_MIN = 0.002
DEFAULT_THETA_MIN = math.radians(2.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped object poses, by default expressed in the receptacle frame."""

    times: np.ndarray
    poses: tuple
    frame: str = "receptacle"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1).copy()
        poses = tuple(self.poses)
        if len(poses) == 0:
            raise EmptyTrajectory("trajectory has no waypoints")
        if len(times) != len(poses):
            raise ValueError("one timestamp per pose required")
        if not np.all(np.isfinite(times)) or np.any(np.diff(times) <= 0):
            raise ValueError("timestamps must be finite and strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def subset(self, indices) -> "Trajectory":
        idx = list(indices)
        return Trajectory(self.times[idx], [self.poses[i] for i in idx], self.frame)

    def transformed(self, g: Pose) -> "Trajectory":
        """Left-multiply every pose by ``g``."""
        return Trajectory(self.times, [g @ p for p in self.poses], self.frame)

    @classmethod
    def from_poses(cls, poses, dt=0.1, frame="receptacle"):
        return cls(dt * np.arange(len(poses)), poses, frame)


def save_trajectory(traj: Trajectory, path):
    with open(path, "w") as fh:
        for t, pose in zip(traj.times, traj.poses):
            fh.write(json.dumps({"t": float(t), **pose.to_dict()}) + "\n")


def load_trajectory(path, frame="receptacle") -> Trajectory:
    times, poses = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                times.append(rec["t"])
                poses.append(Pose.from_dict(rec))
    return Trajectory(times, poses, frame)


# ---------------------------------------------------------------------------
# demonstration logs


@dataclass(frozen=True, eq=False)
class DemoLog:
    """Raw tracker output for one demonstration, all in the camera frame.

    ``relative`` holds the object motion since the first frame, so the
    first entry is the identity.
    """

    xi0: Pose
    receptacle: Pose
    extrinsics: Pose | None
    times: np.ndarray
    relative: tuple

    def to_records(self):
        yield {"extrinsics": None if self.extrinsics is None else self.extrinsics.to_dict(),
               "receptacle": self.receptacle.to_dict(), "xi0": self.xi0.to_dict()}
        for t, rel in zip(self.times, self.relative):
            yield {"t": float(t), "rel_q": rel.q.tolist(), "rel_p": rel.t.tolist()}


def save_demo_log(log: DemoLog, path):
    with open(path, "w") as fh:
        for rec in log.to_records():
            fh.write(json.dumps(rec) + "\n")


def _pose_or_raise(q, p, what):
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != (4,) or p.shape != (3,) or not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise FrameChainError(f"{what} is missing or non-finite")
    if np.linalg.norm(q) == 0:
        raise FrameChainError(f"{what} has a zero quaternion")
    return Pose(q, p)


def _header_pose(header, key):
    d = header.get(key)
    if not isinstance(d, dict) or "q" not in d or "p" not in d:
        raise FrameChainError(f"header lacks {key}")
    return _pose_or_raise(d["q"], d["p"], key)


def load_demo_log(path) -> DemoLog:
    """Stream a JSON-lines demo log: header first, then ``{t, rel_q, rel_p}`` frames."""
    times, rel = [], []
    header = None
    with open(path) as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FrameChainError(f"line {n + 1}: {exc}") from None
            if header is None:
                header = rec
                continue
            try:
                times.append(float(rec["t"]))
                rel.append(_pose_or_raise(rec["rel_q"], rec["rel_p"], f"frame {len(rel)}"))
            except (KeyError, TypeError) as exc:
                raise FrameChainError(f"line {n + 1}: malformed frame record ({exc})") from None
    if header is None:
        raise FrameChainError("empty demo log")
    return DemoLog(_header_pose(header, "xi0"), _header_pose(header, "receptacle"),
                   _header_pose(header, "extrinsics"), np.asarray(times), tuple(rel))


def parse_demo(log: DemoLog, identity_tol=1e-9) -> Trajectory:
    """Receptacle-frame trajectory ``rec^-1 . rel_t . xi0`` from a tracker log."""
    if log.extrinsics is None:
        raise FrameChainError("camera extrinsics missing")
    for pose in (log.extrinsics, log.receptacle, log.xi0):
        if not (np.all(np.isfinite(pose.q)) and np.all(np.isfinite(pose.t))):
            raise FrameChainError("non-finite pose in frame chain")
    if len(log.relative) == 0:
        raise EmptyTrajectory("demo log has no frames")
    first = log.relative[0]
    if first.rotation_angle() > identity_tol or np.linalg.norm(first.t) > identity_tol:
        raise FrameChainError("first relative motion must be the identity")
    rec_inv = log.receptacle.inverse()
    try:
        return Trajectory(log.times, [rec_inv @ (rel @ log.xi0) for rel in log.relative])
    except ValueError as exc:
        raise FrameChainError(str(exc)) from None


# ---------------------------------------------------------------------------
# keypose and discretization


def waypoint_distances(traj: Trajectory, model_points, scene):
    """Object-to-receptacle distance (min SDF over posed model points) per waypoint."""
    pts = np.asarray(getattr(model_points, "points", model_points), dtype=np.float64)
    return np.array([scene.posed_min(pts, p)[0] for p in traj.poses])


def keypose_from_distances(distances, threshold=DEFAULT_KEYPOSE_DISTANCE):
    hits = np.nonzero(np.asarray(distances) <= threshold)[0]
    return int(hits[0]) if len(hits) else len(distances) - 1


def detect_keypose(traj: Trajectory, model_points, scene, threshold=DEFAULT_KEYPOSE_DISTANCE) -> int:
    return keypose_from_distances(waypoint_distances(traj, model_points, scene), threshold)


def discretize(traj: Trajectory, d_min=DEFAULT_D_MIN, theta_min=DEFAULT_THETA_MIN) -> Trajectory:
    """Greedy thinning: keep a waypoint once it is ``d_min`` or ``theta_min`` from the last kept one."""
    kept = [0]
    for i in range(1, len(traj)):
        last = traj.poses[kept[-1]]
        p = traj.poses[i]
        if np.linalg.norm(p.t - last.t) >= d_min or quat_angle(p.q, last.q) >= theta_min:
            kept.append(i)
    if kept[-1] != len(traj) - 1:
        kept.append(len(traj) - 1)
    return traj.subset(kept)


# ---------------------------------------------------------------------------
# symmetry-equivalent subgoals


def symmetric_candidates(current: Pose, subgoal: Pose, sym):
    """Candidates ``subgoal . Q`` sorted by (rotation geodesic, translation, group index).

    Group elements are pure rotations, so every candidate shares the
    subgoal's translation and the translation key only matters for groups
    that carry offsets in the future.
    """
    qs = quat_mul_many(subgoal.q, sym.rotations)
    ang = quat_angles(current.q, qs)
    trans = np.full(len(qs), float(np.linalg.norm(subgoal.t - current.t)))
    order = np.lexsort((np.arange(len(qs)), trans, ang))
    for k in order:
        yield Pose(qs[k], subgoal.t)


def select_symmetric_subgoal(current: Pose, subgoal: Pose, sym, feasible=None) -> Pose:
    for cand in symmetric_candidates(current, subgoal, sym):
        if feasible is None or feasible(cand):
            return cand
    raise NoFeasibleSubgoal("no symmetry-equivalent subgoal passes the feasibility check")
