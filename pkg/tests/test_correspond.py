import math

import numpy as np
import pytest

from lastinch.attention import SdfScene, attention_heatmap, box, cylinder
from lastinch.correspond import (
    DenseCorrespondence,
    build_correspondence,
    load_correspondence,
    reproject_trajectory,
    save_correspondence,
)
from lastinch.demo import Trajectory
from lastinch.errors import EmptyCloud, EmptyTrajectory, MissingAnchorImage
from lastinch.geom import Pose, quat_angle, quat_from_rotvec, sample_surface
from lastinch.nunocs import normalize_to_nunocs
from lastinch.shapes import cylinder_mesh, gear_mesh


def brute_nn(a, b):
    d = np.sqrt(((a[:, None, :] - b[None]) ** 2).sum(axis=2))
    return d.argmin(axis=1), d.min(axis=1)


def model(mesh, spacing=0.002):
    pts = sample_surface(mesh, spacing).points
    return pts, normalize_to_nunocs(pts)[0]


def test_identical_clouds_identity_map():
    pts = np.random.default_rng(0).uniform(size=(100, 3))
    corr = build_correspondence(pts, pts)
    np.testing.assert_array_equal(corr.demo_to_novel, np.arange(100))
    assert np.all(corr.residuals == 0)
    np.testing.assert_array_equal(corr.novel_to_demo(), np.arange(100))


def test_single_perturbed_point():
    rng = np.random.default_rng(1)
    demo = rng.uniform(0.2, 0.8, size=(50, 3))
    novel = demo.copy()
    novel[7, 0] += 0.01
    corr = build_correspondence(demo, novel)
    assert corr.residuals[7] == pytest.approx(0.01, abs=1e-12)
    assert np.count_nonzero(corr.residuals) == 1


def test_matches_bruteforce():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(size=(rng.integers(1, 400), 3)), rng.uniform(size=(rng.integers(1, 400), 3))
        corr = build_correspondence(a, b)
        idx, dist = brute_nn(a, b)
        np.testing.assert_array_equal(corr.demo_to_novel, idx)
        np.testing.assert_allclose(corr.residuals, dist, atol=1e-12)


def test_empty_and_csv(tmp_path):
    with pytest.raises(EmptyCloud):
        build_correspondence(np.zeros((0, 3)), np.zeros((3, 3)))
    rng = np.random.default_rng(2)
    corr = build_correspondence(rng.uniform(size=(30, 3)), rng.uniform(size=(20, 3)))
    save_correspondence(corr, tmp_path / "c.csv")
    back = load_correspondence(tmp_path / "c.csv", 20)
    np.testing.assert_array_equal(back.demo_to_novel, corr.demo_to_novel)
    np.testing.assert_array_equal(back.residuals, corr.residuals)
    assert (tmp_path / "c.csv").read_text().startswith("demo_idx,novel_idx,residual")


def platform_scene():
    return SdfScene([cylinder([0, 0, -0.005], 0.03, 0.005)])


def descent(final, n=30):
    return Trajectory.from_poses([Pose(final.q, final.t + [0, 0, 0.002 * (n - 1 - i)]) for i in range(n)])


def test_self_reprojection_identity():
    pts, nc = model(cylinder_mesh(0.01, 0.025))
    corr = build_correspondence(nc, nc)
    traj = descent(Pose(quat_from_rotvec([0.1, 0.05, 0.3]), [0.001, 0, 0.03]))
    out, _ = reproject_trajectory(traj, pts, pts, corr, platform_scene())
    for a, b in zip(out.poses, traj.poses):
        assert quat_angle(a.q, b.q) <= 1e-9
        assert np.linalg.norm(a.t - b.t) <= 1e-9


def test_standing_float_vs_anchor():
    demo_pts, demo_nc = model(cylinder_mesh(0.01, 0.025))
    novel_pts, novel_nc = model(cylinder_mesh(0.01, 0.022))
    corr = build_correspondence(demo_nc, novel_nc)
    traj = descent(Pose(t=[0, 0, 0.025]))
    scene = platform_scene()
    centroid, _ = reproject_trajectory(traj, demo_pts, novel_pts, corr, scene, mode="centroid")
    anchored, _ = reproject_trajectory(traj, demo_pts, novel_pts, corr, scene)
    float_gap = centroid[-1].apply(novel_pts)[:, 2].min()
    anchor_gap = anchored[-1].apply(novel_pts)[:, 2].min()
    assert abs(float_gap - 0.003) < 1e-12
    assert abs(anchor_gap) < 1e-12


def test_anchor_contact_preservation():
    rng = np.random.default_rng(3)
    demo_pts, demo_nc = model(cylinder_mesh(0.01, 0.025), 0.003)
    novel_pts, novel_nc = model(cylinder_mesh(0.013, 0.02), 0.003)
    corr = build_correspondence(demo_nc, novel_nc)
    traj = Trajectory.from_poses([Pose(rng.normal(size=4), rng.uniform(-0.05, 0.05, 3) + [0, 0, 0.05])
                                  for _ in range(20)])
    scene = platform_scene()
    out, anchors = reproject_trajectory(traj, demo_pts, novel_pts, corr, scene)
    for demo_pose, target, (a, b) in zip(traj.poses, out.poses, anchors):
        assert a == attention_heatmap(demo_pts, demo_pose, scene).anchor_index
        assert np.linalg.norm(target.apply(novel_pts[b]) - demo_pose.apply(demo_pts[a])) <= 1e-9


def test_rigid_motion_equivariance():
    rng = np.random.default_rng(4)
    demo_pts, demo_nc = model(cylinder_mesh(0.01, 0.025), 0.003)
    novel_pts, novel_nc = model(cylinder_mesh(0.008, 0.03), 0.003)
    corr = build_correspondence(demo_nc, novel_nc)
    traj = Trajectory.from_poses([Pose(rng.normal(size=4), rng.uniform(-0.05, 0.05, 3)) for _ in range(10)])
    scene = SdfScene([box([0, 0, -0.01], [0.05, 0.05, 0.01]), cylinder([0.02, 0, 0], 0.005, 0.02)])
    g = Pose(rng.normal(size=4), rng.normal(size=3))
    base, _ = reproject_trajectory(traj, demo_pts, novel_pts, corr, scene)
    moved, _ = reproject_trajectory(traj.transformed(g), demo_pts, novel_pts, corr, scene.transformed(g))
    for a, b in zip(base.poses, moved.poses):
        expected = g @ a
        assert quat_angle(b.q, expected.q) <= 1e-9
        assert np.linalg.norm(b.t - expected.t) <= 1e-9


def test_gear_with_wider_hole_stays_coaxial():
    h = 0.004
    demo_pts, demo_nc = model(gear_mesh(0.025, 0.008, 2 * h))
    novel_pts, novel_nc = model(gear_mesh(0.025, 0.012, 2 * h))
    corr = build_correspondence(demo_nc, novel_nc)
    scene = SdfScene([box([0, 0, -0.005], [0.05, 0.05, 0.005]), cylinder([0, 0, 0.015], 0.0075, 0.015)])
    traj = descent(Pose(t=[0, 0, h]))
    out, _ = reproject_trajectory(traj, demo_pts, novel_pts, corr, scene)
    final_demo, final_novel = traj[-1], out[-1]
    # hole axis = image of the model z axis through the model origin
    for z in (-0.01, 0.0, 0.01):
        d = final_demo.apply([0, 0, z])
        n = final_novel.apply([0, 0, z])
        assert np.linalg.norm((d - n)[:2]) <= 1e-6
    assert quat_angle(final_novel.q, final_demo.q) <= 1e-12


def test_reproject_errors():
    pts = np.random.default_rng(5).uniform(size=(10, 3))
    corr = DenseCorrespondence(np.full(10, -1), np.zeros(10), 10)
    traj = Trajectory.from_poses([Pose()])
    with pytest.raises(MissingAnchorImage):
        reproject_trajectory(traj, pts, pts, corr, platform_scene())
    with pytest.raises(EmptyTrajectory):
        reproject_trajectory(None, pts, pts, corr, platform_scene())


def test_delta_rotation_applied():
    pts, nc = model(cylinder_mesh(0.01, 0.025), 0.004)
    corr = build_correspondence(nc, nc)
    traj = descent(Pose(t=[0, 0, 0.025]), 3)
    delta = Pose(quat_from_rotvec([0, 0, math.pi / 2]))
    out, _ = reproject_trajectory(traj, pts, pts, corr, platform_scene(), delta=delta)
    assert quat_angle(out[0].q, delta.q) < 1e-12
