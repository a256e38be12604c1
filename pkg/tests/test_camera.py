import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_view, random_transform
from liftreg.camera import (
    CameraIntrinsics,
    CameraView,
    back_project,
    project_point,
    project_points,
    resize_view,
    visible,
    visible_mask,
)
from liftreg.geometry import RigidTransform


def ramp_depth(H=24, W=32):
    v, u = np.mgrid[0:H, 0:W]
    return 1.5 + 0.02 * u + 0.01 * v


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 10, 5, 5, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(10, 10, 5, 5, 0, 10)


def test_intrinsics_scaled_proportionally():
    k = CameraIntrinsics(100, 120, 79.5, 59.5, 160, 120).scaled(320, 240)
    assert (k.fx, k.fy, k.cx, k.cy) == (200, 240, 159, 119)


def test_view_shape_checks():
    intr = CameraIntrinsics(10, 10, 2, 2, 4, 4)
    with pytest.raises(ValueError):
        CameraView(intr, RigidTransform.identity(), np.zeros((4, 5)), np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        CameraView(intr, RigidTransform.identity(), -np.ones((4, 4)), np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        CameraView(intr, RigidTransform.identity(), np.zeros((4, 4)), np.zeros((4, 4, 3)), np.zeros((3, 4, 2)))


def test_principal_ray_back_projection():
    intr = CameraIntrinsics(50, 50, 2, 1, 5, 3)
    depth = np.zeros((3, 5))
    depth[1, 2] = 2.0
    cloud = back_project(CameraView(intr, RigidTransform.identity(), depth, np.ones((3, 5, 3))))
    np.testing.assert_allclose(cloud.positions, [[0, 0, 2]])
    np.testing.assert_allclose(cloud.colors, [[1, 1, 1]])


def test_all_invalid_depth_gives_empty_cloud():
    assert len(back_project(make_view(np.zeros((8, 8))))) == 0


def test_stride_subsamples_grid():
    view = make_view(ramp_depth())
    cloud, (u, v) = back_project(view, stride=4, return_pixels=True)
    assert len(cloud) == 6 * 8
    assert set(u.tolist()) == {0, 4, 8, 12, 16, 20, 24, 28}


def test_translated_pose_shifts_cloud():
    depth = ramp_depth()
    t = np.array([0.3, -1.0, 2.0])
    a = back_project(make_view(depth))
    b = back_project(make_view(depth, pose=RigidTransform.from_translation(t)))
    np.testing.assert_allclose(b.positions, a.positions + t, atol=1e-12)


def test_project_point_basics():
    view = make_view(ramp_depth())
    intr = view.intrinsics
    assert project_point(view, [0, 0, 1]) == pytest.approx((intr.cx, intr.cy, 1.0))
    assert project_point(view, [0, 0, -1]) is None
    assert project_point(view, [0, 0, 0]) is None
    assert project_point(view, [100, 0, 1]) is None


def test_frame_bounds_are_half_open():
    view = make_view(np.ones((10, 10)), f=10.0)
    # u = 10 * x + 4.5 with z = 1; u = 0 is in, u = W is out
    assert project_point(view, [-0.45, 0, 1]) is not None
    assert project_point(view, [0.55, 0, 1]) is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    depth = rng.uniform(0.5, 6.0, (20, 30))
    depth[rng.random(depth.shape) < 0.2] = 0
    view = make_view(depth, pose=random_transform(rng), f=rng.uniform(20, 80))
    cloud, (u, v) = back_project(view, return_pixels=True)
    pu, pv, z, ok = project_points(view, cloud.positions)
    assert ok.all()
    assert np.abs(pu - u).max(initial=0) < 0.5 and np.abs(pv - v).max(initial=0) < 0.5
    assert np.abs(z - depth[v, u]).max(initial=0) < 1e-6


def test_projection_invariant_along_viewing_ray(rng):
    view = make_view(np.ones((20, 20)), pose=random_transform(rng))
    p = view.pose.apply([0.05, -0.03, 1.0])
    ray = p - view.pose.translation
    u0, v0, _ = project_point(view, p)
    for s in (0.5, 2.0, 7.0):
        u1, v1, _ = project_point(view, view.pose.translation + s * ray)
        assert abs(u1 - u0) < 1e-6 and abs(v1 - v0) < 1e-6


class TestVisibility:
    def test_back_projected_points_visible(self, rng):
        view = make_view(ramp_depth(), pose=random_transform(rng))
        cloud = back_project(view)
        assert visible_mask(view, cloud.positions, 0.01).mask.all()

    def test_point_behind_surface_hidden(self):
        view = make_view(np.full((10, 10), 2.0))
        p = np.array([0.0, 0.0, 2.0])
        assert visible(view, p, 0.01)
        ray = p / np.linalg.norm(p)
        assert not visible(view, p + 1.0 * ray, 0.01)

    def test_outside_frame_and_invalid_depth(self):
        depth = np.full((10, 10), 2.0)
        depth[5, 5] = 0
        view = make_view(depth, f=10.0)
        assert not visible(view, [50.0, 0, 2.0])
        # pixel (5, 5) has no depth: point at (0.5/10*2, ...) projects there
        p = np.array([(5 - 4.5) / 10 * 2.0, (5 - 4.5) / 10 * 2.0, 2.0])
        assert not visible(view, p)

    def test_tolerance_must_be_positive(self):
        with pytest.raises(ValueError):
            visible(make_view(np.ones((4, 4))), [0, 0, 1], 0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_in_tolerance(self, seed):
        rng = np.random.default_rng(seed)
        view = make_view(rng.uniform(1, 3, (16, 16)))
        pts = rng.uniform([-1, -1, 0.5], [1, 1, 4], (200, 3))
        prev = np.zeros(200, bool)
        for tol in (0.01, 0.05, 0.2, 1.0):
            m = visible_mask(view, pts, tol).mask
            assert np.all(m[prev])
            prev = m


def test_resize_view_keeps_geometry():
    view = make_view(np.full((20, 40), 3.0), color=np.random.default_rng(0).random((20, 40, 3)))
    small = resize_view(view, 10, 20)
    assert small.shape == (10, 20)
    assert small.intrinsics.fx == pytest.approx(view.intrinsics.fx / 2)
    assert np.all(small.depth == 3.0)
