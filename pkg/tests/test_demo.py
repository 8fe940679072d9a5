import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastinch.attention import SdfScene, plane
from lastinch.demo import (
    DemoLog,
    Trajectory,
    detect_keypose,
    discretize,
    keypose_from_distances,
    load_demo_log,
    load_trajectory,
    parse_demo,
    save_demo_log,
    save_trajectory,
    select_symmetric_subgoal,
)
from lastinch.errors import EmptyTrajectory, FrameChainError, NoFeasibleSubgoal
from lastinch.geom import Pose, quat_angle, yaw_quat
from lastinch.nunocs import SymmetryGroup


def random_pose(rng, trans=0.3):
    return Pose(rng.normal(size=4), rng.uniform(-trans, trans, 3))


def random_trajectory(rng, n):
    return Trajectory.from_poses([random_pose(rng) for _ in range(n)])


def log_from_trajectory(traj, receptacle, extrinsics=Pose()):
    xi0 = receptacle @ traj[0]
    rel = [receptacle @ p @ xi0.inverse() for p in traj.poses]
    rel[0] = Pose()
    return DemoLog(xi0, receptacle, extrinsics, traj.times, tuple(rel))


def test_trajectory_invariants():
    with pytest.raises(EmptyTrajectory):
        Trajectory([], [])
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [Pose(), Pose()])


def test_identity_motions_give_constant_trajectory():
    rng = np.random.default_rng(0)
    rec, xi0 = random_pose(rng), random_pose(rng)
    log = DemoLog(xi0, rec, Pose(), np.arange(5.0), (Pose(),) * 5)
    expected = rec.inverse() @ xi0
    for p in parse_demo(log).poses:
        assert quat_angle(p.q, expected.q) < 1e-12
        assert np.linalg.norm(p.t - expected.t) < 1e-12


def test_generate_parse_roundtrip():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        traj = random_trajectory(rng, 20)
        out = parse_demo(log_from_trajectory(traj, random_pose(rng, 1.0)))
        for a, b in zip(out.poses, traj.poses):
            assert quat_angle(a.q, b.q) < 1e-9
            assert np.linalg.norm(a.t - b.t) < 1e-9


def test_scene_motion_invariance():
    rng = np.random.default_rng(1)
    traj = random_trajectory(rng, 10)
    rec = random_pose(rng)
    log = log_from_trajectory(traj, rec)
    g = random_pose(rng, 2.0)
    # moving the whole scene by G moves xi0 and the receptacle; relative motions conjugate
    moved = DemoLog(g @ log.xi0, g @ rec, log.extrinsics, log.times,
                    tuple(g @ r @ g.inverse() for r in log.relative))
    for a, b in zip(parse_demo(log).poses, parse_demo(moved).poses):
        assert quat_angle(a.q, b.q) < 1e-9
        assert np.linalg.norm(a.t - b.t) < 1e-9


def test_missing_extrinsics_and_bad_chain(tmp_path):
    rng = np.random.default_rng(2)
    traj = random_trajectory(rng, 4)
    log = log_from_trajectory(traj, Pose())
    with pytest.raises(FrameChainError):
        parse_demo(DemoLog(log.xi0, log.receptacle, None, log.times, log.relative))
    bad_first = (random_pose(rng),) + log.relative[1:]
    with pytest.raises(FrameChainError):
        parse_demo(DemoLog(log.xi0, log.receptacle, Pose(), log.times, bad_first))
    path = tmp_path / "log.jsonl"
    save_demo_log(log, path)
    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    header["extrinsics"]["p"] = [0, float("nan"), 0]
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(FrameChainError):
        load_demo_log(path)
    del header["extrinsics"]
    path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
    with pytest.raises(FrameChainError):
        load_demo_log(path)


def test_log_and_trajectory_io(tmp_path):
    rng = np.random.default_rng(3)
    traj = random_trajectory(rng, 7)
    log = log_from_trajectory(traj, random_pose(rng))
    save_demo_log(log, tmp_path / "d.jsonl")
    back = parse_demo(load_demo_log(tmp_path / "d.jsonl"))
    for a, b in zip(back.poses, traj.poses):
        assert quat_angle(a.q, b.q) < 1e-9
    save_trajectory(traj, tmp_path / "t.jsonl")
    again = load_trajectory(tmp_path / "t.jsonl")
    np.testing.assert_array_equal(again.times, traj.times)
    for a, b in zip(again.poses, traj.poses):
        np.testing.assert_array_equal(a.q, b.q)
        np.testing.assert_array_equal(a.t, b.t)


def test_keypose_examples():
    assert keypose_from_distances([0.10, 0.06, 0.05, 0.02]) == 2
    assert keypose_from_distances([0.3, 0.2, 0.1]) == 2
    # a descent onto a plane: min point z drives the distance
    traj = Trajectory.from_poses([Pose(t=[0, 0, z]) for z in (0.10, 0.06, 0.05, 0.02)])
    assert detect_keypose(traj, np.zeros((1, 3)), SdfScene([plane()])) == 2


@settings(max_examples=100)
@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=30), st.floats(0, 0.2), st.floats(0, 0.2))
def test_keypose_monotone_in_threshold(dist, a, b):
    lo, hi = sorted((a, b))
    assert keypose_from_distances(dist, lo) >= keypose_from_distances(dist, hi)


def test_discretize_example():
    traj = Trajectory.from_poses([Pose(t=[x * 1e-3, 0, 0]) for x in (0, 1, 1.5, 2.5, 4)])
    out = discretize(traj)
    np.testing.assert_allclose([p.t[0] for p in out.poses], [0, 2.5e-3, 4e-3])
    single = Trajectory.from_poses([Pose()])
    assert len(discretize(single)) == 1


def test_discretize_spacing_and_idempotence():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 200))
        steps = [Pose(rng.normal(scale=0.01, size=4) + [1, 0, 0, 0], rng.normal(scale=0.0008, size=3))
                 for _ in range(n)]
        poses = [Pose()]
        for s in steps[1:]:
            poses.append(poses[-1] @ s)
        out = discretize(Trajectory.from_poses(poses))
        for a, b in zip(out.poses[:-2], out.poses[1:-1]):
            assert np.linalg.norm(b.t - a.t) >= 0.002 or quat_angle(a.q, b.q) >= math.radians(2)
        again = discretize(out)
        np.testing.assert_array_equal(again.times, out.times)


def test_symmetric_subgoal_examples():
    sym = SymmetryGroup.z_rotations(5)
    cur = Pose(yaw_quat(math.radians(10)), [0.01, 0, 0])
    sel = select_symmetric_subgoal(cur, Pose(yaw_quat(0.0), [0.01, 0, 0]), sym)
    assert quat_angle(sel.q, cur.q) < 1e-12
    trivial = SymmetryGroup.trivial()
    goal = Pose(yaw_quat(0.3))
    assert select_symmetric_subgoal(cur, goal, trivial, lambda p: True) is not None
    with pytest.raises(NoFeasibleSubgoal):
        select_symmetric_subgoal(cur, goal, trivial, lambda p: False)


def test_symmetric_subgoal_bruteforce_feasibility():
    sym = SymmetryGroup.z_rotations(5)
    target = yaw_quat(math.pi)
    only_180 = lambda p: quat_angle(p.q, target) < 1e-9  # noqa: E731
    sel = select_symmetric_subgoal(Pose(), Pose(), sym, only_180)
    assert quat_angle(sel.q, target) < 1e-9


def test_symmetric_selection_invariance():
    sym = SymmetryGroup.z_rotations(5)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        cur, goal = random_pose(rng), random_pose(rng)
        ref = select_symmetric_subgoal(cur, goal, sym)
        for k in rng.choice(len(sym), 5):
            other = select_symmetric_subgoal(cur, goal @ Pose(sym.rotations[k]), sym)
            assert quat_angle(ref.q, other.q) < 1e-9
            assert np.linalg.norm(ref.t - other.t) < 1e-12
