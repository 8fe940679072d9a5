import math

import numpy as np
import pytest

from lastinch import _kernels
from lastinch.attention import SdfScene, box, cylinder, plane
from lastinch.geom import Pose, quat_from_axis_angle, quat_normalize
from lastinch.shapes import make_mesh


def random_quat(rng):
    return quat_normalize(rng.normal(size=4))


needs_compiled = pytest.mark.skipif(_kernels.compiled is None, reason="compiled kernels not built")


def _scene(rng):
    return SdfScene([
        plane(Pose(random_quat(rng), rng.normal(scale=0.05, size=3))),
        box(rng.normal(scale=0.05, size=3), rng.uniform(0.005, 0.03, size=3), q=random_quat(rng)),
        cylinder(rng.normal(scale=0.05, size=3), 0.01, 0.02, q=random_quat(rng)),
        cylinder(rng.normal(scale=0.05, size=3), 0.004, q=random_quat(rng)),
    ])


@pytest.mark.parametrize("seed", range(5))
def test_posed_sdf_matches_primitive_union(seed):
    rng = np.random.default_rng(seed)
    scene = _scene(rng)
    pts = rng.normal(scale=0.05, size=(400, 3))
    pose = Pose(random_quat(rng), rng.normal(scale=0.02, size=3))
    ref = scene.sdf(pose.apply(pts))
    for impl in filter(None, (_kernels.python, _kernels.compiled)):
        got = impl.posed_sdf(pts, np.ascontiguousarray(pose.R), pose.t, scene._packed)
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-15)


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_kernel_backends_agree_on_posed_sdf(seed):
    rng = np.random.default_rng(100 + seed)
    scene = _scene(rng)
    pts = rng.normal(scale=0.05, size=(300, 3))
    pose = Pose(random_quat(rng), rng.normal(scale=0.02, size=3))
    args = (pts, np.ascontiguousarray(pose.R), pose.t, scene._packed)
    np.testing.assert_allclose(_kernels.compiled.posed_sdf(*args), _kernels.python.posed_sdf(*args),
                               rtol=0, atol=1e-16)
    cv, ci = _kernels.compiled.posed_min_sdf(*args)
    pv, pi = _kernels.python.posed_min_sdf(*args)
    assert ci == pi and abs(cv - pv) <= 1e-16


def test_posed_min_empty_points():
    scene = SdfScene([plane()])
    assert scene.posed_min(np.zeros((0, 3)), Pose()) == (math.inf, -1)


@needs_compiled
def test_kernel_backends_agree_on_rasterizer():
    mesh = make_mesh("gear", outer_radius=0.025, hole_radius=0.008, thickness=0.008)
    pose = Pose(quat_from_axis_angle([1, 0.3, 0], 2.4), [0.002, -0.003, 0.25])
    verts = pose.apply(mesh.vertices)
    args = (verts, mesh.faces, 300.0, 300.0, 79.5, 59.5, 160, 120)
    pd, pf = _kernels.python.rasterize_depth(*args)
    cd, cf = _kernels.compiled.rasterize_depth(*[np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a
                                                 for a in args])
    assert np.isfinite(pd).sum() > 500
    np.testing.assert_array_equal(np.isfinite(pd), np.isfinite(cd))
    np.testing.assert_allclose(cd[np.isfinite(cd)], pd[np.isfinite(pd)], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(pf, cf)


def test_fallback_selected_by_environment():
    import os
    import subprocess
    import sys

    code = "import lastinch._kernels as k; print(k.BACKEND)"
    env = dict(os.environ, LASTINCH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
