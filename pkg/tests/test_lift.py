import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_view, random_transform
from liftreg.camera import back_project, project_points
from liftreg.errors import ConfigurationError
from liftreg.features import Correspondence2D, FeatureProvider, FeatureProviderKind
from liftreg.geometry import PointCloud, RigidTransform, rotation_about_axis
from liftreg.lift import (
    CoverageMask,
    LiftConfig,
    LiftMode,
    coverage_report,
    geometry_only,
    lift,
    lift_explicit,
    lift_implicit,
    region_mask,
    select_views,
)

RGB = FeatureProvider(FeatureProviderKind.RGB)


def implicit(provider=RGB, **kw):
    return LiftConfig(mode=LiftMode.IMPLICIT, provider=provider, **kw)


def explicit(provider=RGB, **kw):
    return LiftConfig(mode=LiftMode.EXPLICIT, provider=provider, **kw)


def wall_view(rng, H=30, W=40, pose=None, depth=2.0):
    return make_view(np.full((H, W), depth), color=rng.random((H, W, 3)), pose=pose, f=30.0)


def corr_at(pixels):
    return [Correspondence2D((float(u), float(v)), (0.0, 0.0)) for u, v in pixels]


def test_config_validation():
    for w in (1, 2, 10, 3.5):
        with pytest.raises(ConfigurationError):
            LiftConfig(window=w)
    with pytest.raises(ConfigurationError):
        LiftConfig(views_per_cloud=0)
    assert LiftConfig().window == 11 and LiftConfig().views_per_cloud == 2


class TestCoverage:
    def test_all_true(self):
        assert coverage_report(CoverageMask(np.ones(10, bool))) == 1.0

    def test_three_of_ten(self):
        m = np.zeros(10, bool)
        m[[1, 4, 7]] = True
        assert coverage_report(CoverageMask(m)) == pytest.approx(0.3)

    def test_empty(self):
        assert coverage_report(CoverageMask(np.zeros(0, bool))) == 0.0


class TestImplicit:
    def test_self_consistency_rgb(self, rng):
        view = wall_view(rng, pose=random_transform(rng))
        cloud, (u, v) = back_project(view, return_pixels=True)
        out = lift_implicit(cloud, [view], implicit())
        assert out.mask.covered.all()
        np.testing.assert_array_equal(out.lifted, view.color[v, u])
        np.testing.assert_array_equal(out.cloud.features[:, 0], 1.0)

    def test_two_identical_views(self, rng):
        view = wall_view(rng)
        cloud = back_project(view)
        one = lift_implicit(cloud, [view], implicit())
        two = lift_implicit(cloud, [view, view], implicit())
        np.testing.assert_array_equal(one.cloud.features, two.cloud.features)

    def test_complementary_views(self, rng):
        # wall at z = 2 seen by two cameras shifted left and right
        left = wall_view(rng, pose=RigidTransform.from_translation([-1.0, 0, 0]))
        right = wall_view(rng, pose=RigidTransform.from_translation([1.0, 0, 0]))
        cloud = PointCloud(np.vstack([back_project(left).positions, back_project(right).positions]))
        a = lift_implicit(cloud, [left], implicit()).mask.covered_fraction
        b = lift_implicit(cloud, [right], implicit()).mask.covered_fraction
        ab = lift_implicit(cloud, [left, right], implicit()).mask.covered_fraction
        assert ab > max(a, b)

    def test_multi_view_mean(self, rng):
        a = wall_view(rng)
        b = make_view(a.depth, color=rng.random(a.color.shape), f=30.0)
        cloud, (u, v) = back_project(a, return_pixels=True)
        out = lift_implicit(cloud, [a, b], implicit())
        np.testing.assert_allclose(out.lifted, 0.5 * (a.color[v, u] + b.color[v, u]))

    def test_invisible_points_zero(self, rng):
        view = wall_view(rng)
        pts = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, -1.0], [100.0, 0.0, 2.0]])
        out = lift_implicit(PointCloud(pts), [view], implicit())
        assert not out.mask.covered.any()
        assert not out.lifted.any()

    def test_dimension_mismatch(self, rng):
        a = wall_view(rng).with_feature_map(np.zeros((30, 40, 4)))
        b = wall_view(rng).with_feature_map(np.zeros((30, 40, 5)))
        with pytest.raises(ConfigurationError):
            lift_implicit(back_project(a), [a, b], implicit(FeatureProvider(FeatureProviderKind.PRECOMPUTED)))

    def test_mode_checked(self, rng):
        view = wall_view(rng)
        with pytest.raises(ConfigurationError):
            lift_implicit(back_project(view), [view], explicit())
        with pytest.raises(ConfigurationError):
            lift_explicit(back_project(view), [view], [[]], implicit())
        with pytest.raises(ConfigurationError):
            lift_implicit(back_project(view), [], implicit())

    def test_permutation_equivariance(self, rng):
        view = wall_view(rng)
        cloud = back_project(view)
        perm = rng.permutation(len(cloud))
        base = lift_implicit(cloud, [view], implicit())
        permuted = lift_implicit(PointCloud(cloud.positions[perm]), [view], implicit())
        np.testing.assert_array_equal(permuted.cloud.features, base.cloud.features[perm])


class TestExplicit:
    def test_zero_correspondences(self, rng):
        view = wall_view(rng)
        out = lift_explicit(back_project(view), [view], [[]], explicit())
        assert out.mask.covered_fraction == 0
        assert not out.lifted.any()

    @pytest.mark.parametrize("window", [3, 11])
    def test_full_image_region_equals_implicit(self, rng, window):
        view = wall_view(rng, pose=random_transform(rng))
        cloud = back_project(view)
        H, W = view.shape
        every = corr_at([(u, v) for v in range(H) for u in range(W)])
        e = lift_explicit(cloud, [view], [every], explicit(window=window))
        i = lift_implicit(cloud, [view], implicit(window=window))
        assert np.array_equal(e.cloud.features, i.cloud.features)
        assert np.array_equal(e.mask.covered, i.mask.covered)

    def test_single_window(self, rng):
        view = wall_view(rng)
        cloud = back_project(view)
        u, v, _, _ = project_points(view, cloud.positions)
        out = lift_explicit(cloud, [view], [corr_at([(20, 15)])], explicit(window=5))
        center = np.flatnonzero((np.round(u) == 20) & (np.round(v) == 15))
        assert out.mask.covered[center].all()
        far = np.maximum(np.abs(u - 20), np.abs(v - 15)) > 5 / 2 + 1
        assert not out.mask.covered[far].any()
        assert out.mask.covered.sum() == 25

    def test_target_endpoint(self, rng):
        view = wall_view(rng)
        cloud = back_project(view)
        corrs = [[Correspondence2D((0.0, 0.0), (20.0, 15.0))]]
        src = lift_explicit(cloud, [view], corrs, explicit(window=3), "source")
        tgt = lift_explicit(cloud, [view], corrs, explicit(window=3), "target")
        assert src.mask.covered.sum() == 4  # corner window clipped to 2x2
        assert tgt.mask.covered.sum() == 9
        assert not (src.mask.covered & tgt.mask.covered).any()

    def test_list_count_checked(self, rng):
        view = wall_view(rng)
        with pytest.raises(ConfigurationError):
            lift_explicit(back_project(view), [view], [[], []], explicit())
        with pytest.raises(ConfigurationError):
            lift(back_project(view), [view], explicit())

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_subset_of_implicit_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        H, W = 24, 32
        depth = rng.uniform(1.5, 2.5, (H, W))
        va = make_view(depth, color=rng.random((H, W, 3)), f=25.0)
        vb = make_view(depth[:, ::-1].copy(), color=rng.random((H, W, 3)), f=25.0,
                       pose=RigidTransform(rotation_about_axis([0, 1, 0], rng.uniform(-10, 10)), rng.normal(0, 0.1, 3)))
        views = [va, vb]
        cloud = PointCloud(np.vstack([back_project(va).positions, back_project(vb).positions]))
        px = [rng.uniform(0, [W, H], (int(rng.integers(1, 8)), 2)) for _ in views]
        more = [np.vstack([p, rng.uniform(0, [W, H], (3, 2))]) for p in px]

        imp = lift_implicit(cloud, views, implicit())
        small = lift_explicit(cloud, views, [corr_at(p) for p in px], explicit(window=3))
        big = lift_explicit(cloud, views, [corr_at(p) for p in px], explicit(window=7))
        extra = lift_explicit(cloud, views, [corr_at(p) for p in more], explicit(window=3))

        assert np.all(imp.mask.covered[small.mask.covered])
        assert np.all(big.mask.covered[small.mask.covered])
        assert np.all(extra.mask.covered[small.mask.covered])
        one = lift_explicit(cloud, views[:1], [corr_at(px[0])], explicit(window=3))
        assert small.mask.covered_fraction >= one.mask.covered_fraction

    def test_explicit_samples_subset_of_implicit_samples(self, rng):
        # with a single view every covered point must equal its implicit value
        view = wall_view(rng)
        cloud = back_project(view)
        e = lift_explicit(cloud, [view], [corr_at([(5, 5), (30, 20)])], explicit(window=7))
        i = lift_implicit(cloud, [view], implicit())
        np.testing.assert_array_equal(e.lifted[e.mask.covered], i.lifted[e.mask.covered])

    def test_pooling_flag(self, rng):
        view = wall_view(rng)
        cloud, (u, v) = back_project(view, return_pixels=True)
        out = lift_implicit(cloud, [view], implicit(window=3, pool=True))
        k = np.flatnonzero((u == 10) & (v == 10))[0]
        np.testing.assert_allclose(out.lifted[k], view.color[9:12, 9:12].mean(axis=(0, 1)))


def test_region_mask_union_and_clipping():
    m = region_mask((10, 10), [[2, 2], [3, 2], [9.4, 9.4]], 3)
    assert m[1:4, 1:5].all() and m.sum() == 12 + 4
    assert not region_mask((5, 5), np.zeros((0, 2)), 3).any()


def test_view_monotonicity_on_synthetic_scene(small_scene):
    frames = small_scene.source_frames
    cloud = small_scene.pair.source.cloud
    fractions = []
    for k in (1, 2, 3):
        views = select_views(frames, k)
        fractions.append(lift_implicit(cloud, views, implicit()).mask.covered_fraction)
    assert fractions[0] <= fractions[1] <= fractions[2]


def test_select_views():
    assert select_views(list(range(8)), 1) == [0]
    assert select_views(list(range(8)), 2) == [0, 7]
    assert select_views(list(range(9)), 3) == [0, 4, 8]
    assert select_views(list(range(2)), 5) == [0, 1]


def test_geometry_only():
    out = geometry_only(PointCloud(np.zeros((4, 3))))
    assert out.cloud.features.shape == (4, 1) and out.cloud.features.all()
    assert out.mask.covered_fraction == 0
