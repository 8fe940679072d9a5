"""Cross-instance correspondence in NUNOCS space and anchored trajectory reprojection."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attention import attention_heatmap
from .demo import Trajectory
from .errors import EmptyCloud, EmptyTrajectory, MissingAnchorImage
from .geom import NearestNeighborIndex, Pose

MODES = ("anchored", "centroid")


@dataclass(frozen=True, eq=False)
class DenseCorrespondence:
    demo_to_novel: np.ndarray
    residuals: np.ndarray
    n_novel: int

    def __len__(self):
        return len(self.demo_to_novel)

    def novel_to_demo(self):
        """Lowest demo index landing on each novel point, ``-1`` where none does."""
        inv = np.full(self.n_novel, -1, dtype=np.int64)
        valid = np.nonzero(self.demo_to_novel >= 0)[0]
        # iterate in reverse so the lowest demo index is written last
        inv[self.demo_to_novel[valid[::-1]]] = valid[::-1]
        return inv

    def image(self, demo_index):
        j = int(self.demo_to_novel[demo_index])
        if j < 0:
            raise MissingAnchorImage(f"demo point {demo_index} has no correspondent")
        return j


def _coords(nc):
    return np.asarray(getattr(nc, "coords", nc), dtype=np.float64).reshape(-1, 3)


def build_correspondence(demo_nunocs, novel_nunocs) -> DenseCorrespondence:
    """Map each demo point to its nearest novel point in the canonical cube."""
    demo, novel = _coords(demo_nunocs), _coords(novel_nunocs)
    if len(demo) == 0 or len(novel) == 0:
        raise EmptyCloud("correspondence needs two nonempty clouds")
    idx, dist = NearestNeighborIndex(novel).query(demo)
    return DenseCorrespondence(idx.astype(np.int64), dist, len(novel))


def save_correspondence(corr: DenseCorrespondence, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["demo_idx", "novel_idx", "residual"])
        for i, (j, r) in enumerate(zip(corr.demo_to_novel, corr.residuals)):
            w.writerow([i, int(j), repr(float(r))])


def load_correspondence(path, n_novel=None) -> DenseCorrespondence:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["demo_idx"]))
    idx = np.array([int(r["novel_idx"]) for r in rows], dtype=np.int64)
    res = np.array([float(r["residual"]) for r in rows])
    return DenseCorrespondence(idx, res, n_novel if n_novel is not None else int(idx.max()) + 1)


def reproject_trajectory(demo_traj: Trajectory, demo_model, novel_model, corr: DenseCorrespondence,
                         scene, delta=None, mode="anchored"):
    """Target trajectory for a novel instance.

    ``demo_model`` and ``novel_model`` are model-frame points of the two
    instances, ``delta`` the relative canonical rotation (identity when both
    share the canonical frame). In anchored mode each target pose puts the
    novel image of the current demo anchor exactly where the demo anchor was.
    Centroid mode keeps the demo translation; it exists to show why anchoring
    is needed.

    Returns the target trajectory and the per-waypoint (demo, novel) anchor indices.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if demo_traj is None or len(demo_traj) == 0:
        raise EmptyTrajectory("nothing to reproject")
    demo_pts = np.asarray(getattr(demo_model, "points", demo_model), dtype=np.float64)
    novel_pts = np.asarray(getattr(novel_model, "points", novel_model), dtype=np.float64)
    if len(demo_pts) != len(corr):
        raise ValueError("correspondence must cover every demo model point")
    delta = Pose() if delta is None else Pose(getattr(delta, "q", delta))
    out, anchors = [], []
    for pose in demo_traj.poses:
        rotated = Pose(pose.q) @ delta
        if mode == "centroid":
            out.append(Pose(rotated.q, pose.t))
            anchors.append((-1, -1))
            continue
        a = attention_heatmap(demo_pts, pose, scene).anchor_index
        b = corr.image(a)
        world_anchor = pose.apply(demo_pts[a])
        out.append(Pose(rotated.q, world_anchor - rotated.R @ novel_pts[b]))
        anchors.append((a, b))
    return Trajectory(demo_traj.times, out, demo_traj.frame), anchors
