import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_view, random_transform
from liftreg.camera import CameraIntrinsics, back_project
from liftreg.dataset import (
    DatasetManifest,
    FrameRange,
    PairDescriptor,
    export_ply,
    frame_path,
    fuse_views,
    load_pair,
    read_color,
    read_depth,
    read_intrinsics,
    read_manifest,
    read_ply,
    read_pose,
    write_color,
    write_depth,
    write_intrinsics,
    write_manifest,
    write_pose,
)
from liftreg.errors import DatasetIOError, FormatError, ManifestVersionError, ValidationError
from liftreg.geometry import PointCloud, RigidTransform, voxel_downsample
from liftreg.synth import SceneSpec, build_scene, generate_benchmark, look_pose, render_view


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    spec = SceneSpec(seed=11, height=64, width=80, frames_per_side=3, overlap=0.5, overlap_tolerance=0.15)
    generate_benchmark(1, spec, out)
    return out


class TestTextFiles:
    def test_intrinsics_round_trip(self, tmp_path):
        k = CameraIntrinsics(120.5, 121.25, 79.5, 59.5, 160, 120)
        write_intrinsics(tmp_path / "k.txt", k)
        assert read_intrinsics(tmp_path / "k.txt") == k

    @pytest.mark.parametrize("text", ["1 2 3 4 5", "1 2 3 4 5 x", "0 1 1 1 10 10", "1 1 1 1 10.5 10", "1 1 1 1 10 10 10"])
    def test_bad_intrinsics(self, tmp_path, text):
        (tmp_path / "k.txt").write_text(text)
        with pytest.raises((FormatError, ValidationError)):
            read_intrinsics(tmp_path / "k.txt")

    def test_pose_round_trip_exact(self, tmp_path, rng):
        T = random_transform(rng)
        write_pose(tmp_path / "p.txt", T)
        assert np.array_equal(read_pose(tmp_path / "p.txt").as_matrix(), T.as_matrix())

    @pytest.mark.parametrize(
        "text",
        ["1 0 0 0\n0 1 0 0\n0 0 1 0\n", "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 2", "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1 7", "a b c"],
    )
    def test_malformed_pose(self, tmp_path, text):
        (tmp_path / "p.txt").write_text(text)
        with pytest.raises(FormatError):
            read_pose(tmp_path / "p.txt")

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(DatasetIOError, match="nope.txt"):
            read_pose(tmp_path / "nope.txt")


class TestImages:
    def test_depth_round_trip(self, tmp_path, rng):
        depth = np.round(rng.uniform(0.5, 5, (12, 16)), 3)
        depth[0, 0] = 0
        write_depth(tmp_path / "d.png", depth)
        np.testing.assert_allclose(read_depth(tmp_path / "d.png", size=(16, 12)), depth, atol=1e-12)

    def test_depth_overflow(self, tmp_path):
        with pytest.raises(ValueError):
            write_depth(tmp_path / "d.png", np.full((4, 4), 70.0))

    def test_size_checked(self, tmp_path):
        write_depth(tmp_path / "d.png", np.ones((4, 4)))
        with pytest.raises(FormatError):
            read_depth(tmp_path / "d.png", size=(5, 4))

    def test_color_round_trip(self, tmp_path, rng):
        c = rng.integers(0, 256, (6, 7, 3)) / 255.0
        write_color(tmp_path / "c.png", c)
        np.testing.assert_array_equal(read_color(tmp_path / "c.png"), c)

    def test_garbage_image(self, tmp_path):
        (tmp_path / "d.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really")
        with pytest.raises(FormatError):
            read_depth(tmp_path / "d.png")
        with pytest.raises(FormatError):
            read_color(tmp_path / "d.png")

    def test_color_png_is_not_depth(self, tmp_path):
        write_color(tmp_path / "c.png", np.zeros((4, 4, 3)))
        with pytest.raises(FormatError):
            read_depth(tmp_path / "c.png")


def small_manifest(root):
    return DatasetManifest(
        root,
        "intrinsics.txt",
        1000.0,
        (
            PairDescriptor("p0", FrameRange("seq", 0, 1), FrameRange("seq", 2, 3), "gt.txt", 0.25),
            PairDescriptor("p1", FrameRange("a/b", 0, 0), FrameRange("seq", 0, 0), "gt.txt"),
        ),
    )


class TestManifest:
    def test_round_trip(self, tmp_path):
        m = small_manifest(tmp_path)
        write_manifest(tmp_path / "manifest.txt", m)
        assert read_manifest(tmp_path / "manifest.txt", validate=False) == m
        assert read_manifest(tmp_path, validate=False) == m

    def test_missing_files_listed(self, tmp_path):
        write_manifest(tmp_path / "manifest.txt", small_manifest(tmp_path))
        with pytest.raises(ValidationError) as info:
            read_manifest(tmp_path)
        assert "intrinsics.txt" in str(info.value) and "frame-000000.depth.png" in str(info.value)

    def test_empty_pair_list(self, tmp_path):
        write_intrinsics(tmp_path / "intrinsics.txt", CameraIntrinsics(10, 10, 5, 5, 10, 10))
        (tmp_path / "manifest.txt").write_text("version 1\n# nothing here\n")
        m = read_manifest(tmp_path)
        assert m.pairs == () and m.pair_ids == []

    def test_version(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("version 2\n")
        with pytest.raises(ManifestVersionError):
            read_manifest(tmp_path)

    @pytest.mark.parametrize(
        "body",
        [
            "",
            "pair a s:0-1 s:2-3 gt.txt\n",
            "version 1\nversion 1\n",
            "version 1\nfoo bar\n",
            "version 1\npair a s:0-1 s:2-3\n",
            "version 1\npair a s:1-0 s:2-3 gt.txt\n",
            "version 1\npair a ../s:0-1 s:2-3 gt.txt\n",
            "version 1\npair a s:0-1 s:2-3 gt.txt 1.5\n",
            "version 1\npair a s:0-1 s:2-3 gt.txt\npair a s:0-1 s:2-3 gt.txt\n",
            "version 1\ndepth_divisor -3\n",
            "version x\n",
        ],
    )
    def test_format_errors(self, tmp_path, body):
        (tmp_path / "manifest.txt").write_text(body)
        with pytest.raises(FormatError):
            read_manifest(tmp_path, validate=False)

    def test_unknown_pair(self, bench):
        with pytest.raises(ValidationError):
            load_pair(read_manifest(bench), "nope")

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 5), st.floats(0, 1) | st.none()), max_size=6))
    def test_round_trip_property(self, tmp_path_factory, rows):
        root = tmp_path_factory.mktemp("m")
        pairs = tuple(
            PairDescriptor(f"p{i}", FrameRange("s", a, a + n), FrameRange("t/u", a + 1, a + 1 + n), "gt.txt", ov)
            for i, (a, n, ov) in enumerate(rows)
        )
        m = DatasetManifest(root, "k.txt", 5000.0, pairs)
        write_manifest(root / "manifest.txt", m)
        assert read_manifest(root, validate=False) == m


class TestFusion:
    def test_single_frame(self, rng):
        view = make_view(rng.uniform(1, 3, (20, 30)), pose=random_transform(rng))
        fused = fuse_views([view], 0.025)
        expected = voxel_downsample(back_project(view), 0.025)
        np.testing.assert_array_equal(fused.positions, expected.positions)

    def test_duplicate_frames(self, rng):
        view = make_view(rng.uniform(1, 3, (20, 30)), pose=random_transform(rng))
        np.testing.assert_allclose(fuse_views([view, view]).positions, fuse_views([view]).positions, atol=1e-12)

    def test_generator_oracle(self):
        # 50 noise-free frames: every back-projected point lies on a scene surface
        spec = SceneSpec(seed=5, height=64, width=80)
        rng = np.random.default_rng(0)
        scene = build_scene(spec, rng)
        views = []
        for i in range(50):
            pose = look_pose(np.array([0.1, -0.2, 1.4]), math.radians(7.2 * i), math.radians(-12))
            fr = render_view(scene, spec.intrinsics, pose)
            views.append(make_view(fr.depth, fr.color, pose, spec.intrinsics.fx))
        fused = fuse_views(views, 1e-4)
        assert len(fused) > 50 * 1000
        assert scene.surface_distance(fused.positions).max() < 1e-6

    def test_load_pair_matches_frames(self, bench):
        m = read_manifest(bench)
        pair = load_pair(m, "pair-000")
        assert len(pair.source.views) == 2 and len(pair.target.views) == 2
        assert pair.overlap_hint == m.pair("pair-000").overlap
        gt = read_pose(bench / "pair-000" / "gt.txt")
        assert np.array_equal(pair.ground_truth.as_matrix(), gt.as_matrix())
        # the first and last frames are the views
        first = read_pose(frame_path(bench, "pair-000/source", 0, "pose.txt"))
        last = read_pose(frame_path(bench, "pair-000/source", 2, "pose.txt"))
        assert np.array_equal(pair.source.views[0].pose.as_matrix(), first.as_matrix())
        assert np.array_equal(pair.source.views[1].pose.as_matrix(), last.as_matrix())

    def test_load_pair_deterministic(self, bench):
        m = read_manifest(bench)
        a, b = load_pair(m, "pair-000"), load_pair(m, "pair-000")
        assert a.source.cloud.positions.tobytes() == b.source.cloud.positions.tobytes()
        assert a.target.cloud.colors.tobytes() == b.target.cloud.colors.tobytes()

    def test_views_per_cloud(self, bench):
        pair = load_pair(read_manifest(bench), "pair-000", views_per_cloud=1)
        assert len(pair.source.views) == 1

    def test_missing_frame_at_load(self, bench, tmp_path):
        import shutil

        copy = tmp_path / "b"
        shutil.copytree(bench, copy)
        m = read_manifest(copy)
        frame_path(copy, "pair-000/target", 1, "depth.png").unlink()
        with pytest.raises(DatasetIOError, match="frame-000001.depth.png"):
            load_pair(m, "pair-000")


class TestPly:
    @pytest.mark.parametrize("binary", [False, True])
    def test_round_trip(self, tmp_path, rng, binary):
        cloud = PointCloud(rng.uniform(-3, 3, (100, 3)), colors=rng.integers(0, 256, (100, 3)) / 255.0)
        export_ply(cloud, tmp_path / "c.ply", binary=binary)
        back = read_ply(tmp_path / "c.ply")
        assert np.abs(back.positions - cloud.positions).max() < 1e-6
        np.testing.assert_array_equal(np.round(back.colors * 255), np.round(cloud.colors * 255))

    def test_empty(self, tmp_path):
        export_ply(PointCloud(np.zeros((0, 3))), tmp_path / "e.ply")
        assert b"element vertex 0" in (tmp_path / "e.ply").read_bytes()
        assert len(read_ply(tmp_path / "e.ply")) == 0

    def test_apply(self, tmp_path, rng):
        T = random_transform(rng)
        pts = rng.normal(size=(20, 3))
        export_ply(PointCloud(pts), tmp_path / "t.ply", apply=T, binary=True)
        assert np.abs(read_ply(tmp_path / "t.ply").positions - T.apply(pts)).max() < 1e-5

    def test_bad_ply(self, tmp_path):
        (tmp_path / "x.ply").write_bytes(b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n")
        with pytest.raises(FormatError):
            read_ply(tmp_path / "x.ply")

    def test_unwritable(self, tmp_path):
        with pytest.raises(DatasetIOError):
            export_ply(PointCloud(np.zeros((1, 3))), tmp_path / "no" / "dir" / "x.ply")
