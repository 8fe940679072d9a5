import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lastinch.errors import DegenerateExtent, DegenerateInput, InvalidDistribution
from lastinch.geom import Pose, SimilarityTransform, quat_angle, yaw_quat
from lastinch.nunocs import (
    BinEncoding,
    NunocsCloud,
    SymmetryGroup,
    decode_bins,
    denormalize,
    encode_bins,
    normalize_to_nunocs,
    nunocs_loss,
    one_hot,
    pose9d_from_model,
    scale_loss,
    solve_pose9d,
    total_loss,
)


def test_normalize_example():
    nc, ext = normalize_to_nunocs(np.array([[0.0, 0, 0], [2, 4, 8]]))
    np.testing.assert_array_equal(nc.coords, [[0, 0, 0], [1, 1, 1]])
    np.testing.assert_array_equal(ext, [2, 4, 8])
    np.testing.assert_array_equal(nc.scales, [1, 2, 4])


def test_normalize_unit_cube_is_identity():
    pts = np.random.default_rng(0).uniform(size=(50, 3))
    pts[0], pts[1] = 0.0, 1.0
    nc, ext = normalize_to_nunocs(pts)
    np.testing.assert_array_equal(nc.coords, pts)
    np.testing.assert_array_equal(ext, [1, 1, 1])


def test_normalize_roundtrip_seeded():
    rng = np.random.default_rng(1)
    for _ in range(200):
        pts = rng.normal(size=(rng.integers(2, 300), 3)) * rng.uniform(0.01, 3, 3) + rng.normal(size=3)
        nc, ext = normalize_to_nunocs(pts)
        back = denormalize(nc, ext, pts.min(axis=0))
        assert np.abs(back - pts).max() < 1e-9
        assert nc.coords.min() >= 0 and nc.coords.max() <= 1
        assert nc.scales[0] == 1.0


def test_normalize_rejects_planar():
    with pytest.raises(DegenerateExtent):
        normalize_to_nunocs(np.array([[0.0, 0, 0], [1, 1, 0], [2, 0, 0]]))


def test_bins_examples():
    enc = encode_bins(np.array([[0.0, 1.0, 0.505]]), 100)
    assert enc.bins.tolist() == [[0, 99, 50]]
    assert decode_bins(BinEncoding(np.array([[50, 50, 50]]), 100))[0, 0] == pytest.approx(0.505)


@settings(max_examples=200)
@given(st.floats(0.0, 1.0), st.integers(2, 500))
def test_bin_roundtrip_error_bound(c, B):
    enc = encode_bins(np.array([[c, c, c]]), B)
    assert np.all((0 <= enc.bins) & (enc.bins < B))
    assert np.abs(decode_bins(enc) - c).max() <= 1.0 / (2 * B) + 1e-15


def test_loss_zero_for_exact_prediction():
    gt = np.random.default_rng(2).uniform(size=(40, 3))
    assert nunocs_loss(one_hot(gt), gt) == 0.0


def test_loss_zero_for_any_symmetric_prediction():
    gt = np.random.default_rng(3).uniform(0.2, 0.8, size=(40, 3))
    sym = SymmetryGroup.z_rotations(5)
    for k in (0, 1, 17, 36, 71):
        pred = one_hot(sym.apply_about_pivot(gt, k))
        assert nunocs_loss(pred, gt, sym) == 0.0
    # without the symmetry the rotated prediction is penalized
    assert nunocs_loss(one_hot(sym.apply_about_pivot(gt, 17)), gt) > 0


def test_loss_uniform_prediction():
    n, B = 25, 100
    pred = np.full((n, 3, B), 1.0 / B)
    gt = np.random.default_rng(4).uniform(size=(n, 3))
    assert nunocs_loss(pred, gt) == pytest.approx(3 * n * math.log(B), rel=1e-12)


def test_loss_symmetry_invariance():
    """Rotating the prediction by any group element leaves the loss unchanged."""
    rng = np.random.default_rng(5)
    sym = SymmetryGroup.z_rotations(5)
    gt = rng.uniform(0.15, 0.85, size=(60, 3))
    base = nunocs_loss(one_hot(gt, peak=0.7), gt, sym)
    assert base == pytest.approx(-3 * 60 * math.log(0.7))
    for k in range(len(sym)):
        rotated = one_hot(sym.apply_about_pivot(gt, k), peak=0.7)
        assert abs(nunocs_loss(rotated, gt, sym) - base) <= 1e-9


def test_loss_rejects_unnormalized():
    with pytest.raises(InvalidDistribution):
        nunocs_loss(np.full((2, 3, 10), 0.2), np.zeros((2, 3)))


def test_scale_loss():
    assert scale_loss([1, 2, 3], [1, 2, 3]) == 0.0
    assert scale_loss([1, 2, 3], [1, 2, 4]) == 1.0
    rng = np.random.default_rng(6)
    for _ in range(100):
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert scale_loss(a, b) == pytest.approx(math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))), rel=1e-12)


def test_total_loss():
    assert total_loss(2, 3, 1, 1) == 5
    assert total_loss(2, 3, 0, 1) == 3
    assert total_loss(2, 3) == 5


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
def test_total_loss_monotone(a, b, l1, l2, d):
    assert total_loss(a + d, b, l1, l2) >= total_loss(a, b, l1, l2)
    assert total_loss(a, b + d, l1, l2) >= total_loss(a, b, l1, l2)


def test_symmetry_group_properties():
    sym = SymmetryGroup.z_rotations(5)
    assert len(sym) == 72
    assert sym.contains_identity()
    assert SymmetryGroup.z_rotations(90).is_closed()
    assert sym.is_closed()


def random_sim(rng):
    q = rng.normal(size=4)
    return SimilarityTransform(rng.uniform(0.2, 5), q, rng.normal(size=3))


def test_solve_pose9d_recovers_generator():
    rng = np.random.default_rng(7)
    for _ in range(100):
        coords = rng.uniform(size=(200, 3))
        scales = np.array([1.0, 2.0, 4.0])
        sim = random_sim(rng)
        observed = sim.apply(coords * scales)
        pose = solve_pose9d(NunocsCloud(coords, scales), observed)
        assert quat_angle(pose.similarity.q, sim.q) < 1e-9
        assert abs(pose.similarity.scale - sim.scale) / sim.scale < 1e-9
        assert np.linalg.norm(pose.similarity.t - sim.t) < 1e-9
        np.testing.assert_array_equal(pose.nonuniform_scales, scales)
        assert pose.residual_rms < 1e-9


def test_solve_pose9d_identity():
    coords = np.random.default_rng(8).uniform(size=(30, 3))
    pose = solve_pose9d(NunocsCloud(coords, [1, 1, 1]), coords)
    assert pose.similarity.scale == pytest.approx(1.0, abs=1e-12)
    assert quat_angle(pose.similarity.q, [1, 0, 0, 0]) < 1e-12
    np.testing.assert_allclose(pose.similarity.t, 0, atol=1e-12)


def test_solve_pose9d_noise_bound():
    # Monte Carlo over 100 seeds: 500 points of a 5 x 10 x 20 cm box, 1 mm noise.
    errors = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        coords = rng.uniform(size=(500, 3))
        scales = np.array([1.0, 2.0, 4.0])
        sim = SimilarityTransform(0.05, rng.normal(size=4), rng.uniform(-0.3, 0.3, 3))
        observed = sim.apply(coords * scales) + rng.normal(scale=0.001, size=(500, 3))
        pose = solve_pose9d(NunocsCloud(coords, scales), observed)
        errors.append(np.linalg.norm(pose.similarity.t - sim.t))
    assert max(errors) < 0.0005


def test_solve_pose9d_degenerate():
    coords = np.column_stack([np.linspace(0, 1, 5)] * 3)
    with pytest.raises(DegenerateInput):
        solve_pose9d(NunocsCloud(coords, [1, 1, 1]), coords)


def test_model_pose_roundtrip():
    rng = np.random.default_rng(9)
    extents = np.array([0.03, 0.05, 0.02])
    model_pose = Pose(yaw_quat(0.7), [0.1, -0.2, 0.3])
    p9 = pose9d_from_model(model_pose, extents)
    back = p9.model_pose()
    assert quat_angle(back.q, model_pose.q) < 1e-12
    np.testing.assert_allclose(back.t, model_pose.t, atol=1e-15)
    np.testing.assert_allclose(p9.extents, extents, rtol=1e-15)
    local = rng.uniform(-0.5, 0.5, size=(10, 3)) * extents
    world = model_pose.apply(local)
    np.testing.assert_allclose(p9.to_nunocs(world) , local / extents + 0.5, atol=1e-12)
