"""Synthetic RGB-D scenes with exact ground truth.

A scene is a room (seen from inside) furnished with boxes and spheres. Every
surface carries a solid 3D texture, a mix of fractal value noise and a
checker pattern, so a surface point has the same albedo in every view.

Images are rendered by casting one ray per pixel through the analytic
primitives and keeping the nearest hit. Rays are built with unit camera z,
so the hit parameter is the z-depth directly.

Each pair has two short camera sweeps from near the room center. The second
sweep is the first one yawed by an angle chosen by bisection so that the
fused clouds reach the requested overlap fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .camera import CameraIntrinsics, CameraView
from .dataset import (
    DEFAULT_VOXEL,
    DatasetManifest,
    FrameRange,
    Fragment,
    PairDescriptor,
    ScenePair,
    frame_path,
    fuse_views,
    write_color,
    write_depth,
    write_intrinsics,
    write_manifest,
    write_pose,
)
from .errors import ConfigurationError, DatasetIOError, GenerationError
from .features import write_feature_map
from .geometry import CorrespondenceSet, PointCloud, RigidTransform, nearest_neighbor, overlap_fraction
from .lift import select_views

__all__ = [
    "SceneSpec",
    "Scene",
    "SyntheticPair",
    "build_scene",
    "render_view",
    "generate_scene",
    "generate_suite",
    "generate_benchmark",
    "derive_seed",
]

OVERLAP_RADIUS = 0.05
GT_RADIUS = 0.0375
_EPS = 1e-9
_CHECKER_OFFSET = np.array([0.37, 0.61, 0.13])


@dataclass(frozen=True)
class SceneSpec:
    """Everything that determines one synthetic pair.

    ``feature_dim > 0`` also renders a view-invariant dense feature map of
    that many channels per frame (a stand-in for learned image features).
    """

    seed: int = 0
    height: int = 120
    width: int = 160
    focal: float = 0.8  # focal length as a fraction of the image width
    room: tuple[float, float, float] = (5.0, 5.0, 2.8)
    n_boxes: int = 5
    n_spheres: int = 3
    texture_frequency: float = 5.0  # noise lattice cells per meter
    texture_octaves: int = 3
    checker_size: float = 0.25  # meters
    checker_weight: float = 0.25
    frames_per_side: int = 8
    sweep_degrees: float = 20.0
    sweep_translation: float = 0.2
    overlap: float = 0.5
    overlap_tolerance: float = 0.1
    same_camera: bool = False
    depth_noise: float = 0.0
    outlier_rate: float = 0.0
    voxel: float = DEFAULT_VOXEL
    feature_dim: int = 0
    max_attempts: int = 6

    def __post_init__(self):
        if not 0.0 < self.overlap <= 1.0:
            raise ConfigurationError(f"overlap must lie in (0, 1], got {self.overlap}")
        if self.height < 64 or self.width < 64:
            raise ConfigurationError(f"image must be at least 64x64, got {self.width}x{self.height}")
        if self.frames_per_side < 1:
            raise ConfigurationError("frames_per_side must be >= 1")
        if self.depth_noise < 0 or not 0.0 <= self.outlier_rate < 1.0:
            raise ConfigurationError("depth_noise must be >= 0 and outlier_rate in [0, 1)")
        if min(self.room) < 2.0:
            raise ConfigurationError("room must be at least 2 m on every side")
        if self.n_boxes < 0 or self.n_spheres < 0 or self.feature_dim < 0:
            raise ConfigurationError("counts must be non-negative")
        if not (self.voxel > 0 and self.texture_frequency > 0 and self.checker_size > 0):
            raise ConfigurationError("voxel, texture_frequency and checker_size must be positive")
        if not 0.0 <= self.checker_weight <= 1.0:
            raise ConfigurationError("checker_weight must lie in [0, 1]")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        f = self.focal * self.width
        return CameraIntrinsics(f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height)


def derive_seed(seed: int, index: int) -> int:
    """Independent 63-bit seed for item ``index`` of a seeded collection."""
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]).generate_state(1, np.uint64)[0] >> 1)


# -- procedural texture -------------------------------------------------------


class ValueNoise:
    """Trilinearly interpolated lattice noise in [0, 1] with a smoothstep fade."""

    def __init__(self, rng: np.random.Generator):
        perm = rng.permutation(256)
        self._perm = np.concatenate([perm, perm])
        self._values = rng.random(256)

    def _hash(self, i: NDArray, j: NDArray, k: NDArray) -> NDArray:
        p = self._perm
        return p[(p[(p[i & 255] + j) & 255] + k) & 255]

    def __call__(self, points: NDArray) -> NDArray:
        base = np.floor(points)
        f = points - base
        i = base.astype(np.int64)
        s = f * f * (3.0 - 2.0 * f)
        out = np.zeros(points.shape[0])
        for dx in (0, 1):
            wx = s[:, 0] if dx else 1.0 - s[:, 0]
            for dy in (0, 1):
                wy = s[:, 1] if dy else 1.0 - s[:, 1]
                for dz in (0, 1):
                    wz = s[:, 2] if dz else 1.0 - s[:, 2]
                    h = self._hash(i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz)
                    out += wx * wy * wz * self._values[h]
        return out

    def fbm(self, points: NDArray, octaves: int) -> NDArray:
        total = np.zeros(points.shape[0])
        norm = 0.0
        for o in range(octaves):
            a = 0.5**o
            total += a * self(points * (2.0**o) + 17.0 * o)
            norm += a
        return total / norm


# -- primitives ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scene:
    """Analytic scene. Surface ids: 0-5 room faces, then boxes, then spheres."""

    room_lo: NDArray
    room_hi: NDArray
    box_lo: NDArray  # (B, 3)
    box_hi: NDArray
    sphere_center: NDArray  # (S, 3)
    sphere_radius: NDArray  # (S,)
    palette: NDArray  # (n_surfaces, 2, 3) two base colors per surface
    noise: ValueNoise
    feature_noise: list[ValueNoise] = field(default_factory=list)
    texture_frequency: float = 5.0
    texture_octaves: int = 3
    checker_size: float = 0.25
    checker_weight: float = 0.25

    @property
    def n_surfaces(self) -> int:
        return 6 + len(self.box_lo) + len(self.sphere_radius)

    def cast(self, origin: NDArray, dirs: NDArray) -> tuple[NDArray, NDArray]:
        """Nearest hit parameter and surface id for rays ``origin + t * dirs``.

        ``origin`` must lie inside the room and outside every solid.
        """
        n = dirs.shape[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            # room seen from inside: exit distance along each axis
            t_axis = np.where(dirs > 0, (self.room_hi - origin) * inv, np.where(dirs < 0, (self.room_lo - origin) * inv, np.inf))
        axis = np.argmin(t_axis, axis=1)
        best_t = t_axis[np.arange(n), axis]
        best_id = 2 * axis + (dirs[np.arange(n), axis] > 0)
        for b in range(len(self.box_lo)):
            t = _ray_box(origin, dirs, inv, self.box_lo[b], self.box_hi[b])
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_id = np.where(closer, 6 + b, best_id)
        base = 6 + len(self.box_lo)
        for s in range(len(self.sphere_radius)):
            t = _ray_sphere(origin, dirs, self.sphere_center[s], self.sphere_radius[s])
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_id = np.where(closer, base + s, best_id)
        return best_t, best_id

    def albedo(self, points: NDArray, ids: NDArray) -> NDArray:
        """RGB in [0, 1] at surface points; depends only on position and surface."""
        noise = self.noise.fbm(points * self.texture_frequency, self.texture_octaves)
        # offset keeps axis-aligned faces (room walls, floors) off the cell boundaries
        q = np.floor(points / self.checker_size + _CHECKER_OFFSET).astype(np.int64)
        checker = (q.sum(axis=1) & 1).astype(np.float64)
        w = self.checker_weight
        a = (1.0 - w) * noise + w * checker
        c0 = self.palette[ids, 0]
        c1 = self.palette[ids, 1]
        return c0 + (c1 - c0) * a[:, None]

    def feature(self, points: NDArray) -> NDArray:
        """View-invariant dense descriptors (zero-mean noise channels)."""
        chans = [fn.fbm(points * self.texture_frequency * 0.5, 2) - 0.5 for fn in self.feature_noise]
        return np.stack(chans, axis=1) if chans else np.zeros((points.shape[0], 0))

    def surface_distance(self, points: NDArray) -> NDArray:
        """Distance from each point to the nearest surface of the scene."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d = np.min(np.minimum(p - self.room_lo, self.room_hi - p), axis=1)
        d = np.abs(d)
        for lo, hi in zip(self.box_lo, self.box_hi):
            q = np.maximum(lo - p, p - hi)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            d = np.minimum(d, np.abs(outside + inside))
        for c, r in zip(self.sphere_center, self.sphere_radius):
            d = np.minimum(d, np.abs(np.linalg.norm(p - c, axis=1) - r))
        return d


def _ray_box(origin, dirs, inv, lo, hi) -> NDArray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # rays parallel to a slab: inside it the slab never limits, outside it never hits
    parallel = dirs == 0
    inside = (origin > lo) & (origin < hi)
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    hit = (t_near <= t_far) & (t_near > _EPS)
    return np.where(hit, t_near, np.inf)


def _ray_sphere(origin, dirs, center, radius) -> NDArray:
    oc = origin - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / a
    return np.where((disc >= 0) & (t > _EPS), t, np.inf)


def build_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    """Random furniture placed on a ring around the room center.

    The central disc of radius 1.2 m stays empty so cameras placed there
    never start inside a solid.
    """
    W, D, H = spec.room
    lo = np.array([-W / 2, -D / 2, 0.0])
    hi = np.array([W / 2, D / 2, H])
    reach = min(W, D) / 2 - 0.15
    box_lo, box_hi = [], []
    for _ in range(spec.n_boxes):
        size = rng.uniform([0.3, 0.3, 0.3], [0.9, 0.9, 1.3])
        ang = rng.uniform(0, 2 * math.pi)
        half = np.hypot(size[0], size[1]) / 2
        r = rng.uniform(1.25 + half, max(1.25 + half, reach - half))
        c = np.array([r * math.cos(ang), r * math.sin(ang)])
        c = np.clip(c, lo[:2] + size[:2] / 2 + 0.01, hi[:2] - size[:2] / 2 - 0.01)
        b_lo = np.array([c[0] - size[0] / 2, c[1] - size[1] / 2, 0.0])
        box_lo.append(b_lo)
        box_hi.append(b_lo + size)
    centers, radii = [], []
    for _ in range(spec.n_spheres):
        r_s = rng.uniform(0.15, 0.4)
        ang = rng.uniform(0, 2 * math.pi)
        r = rng.uniform(1.25 + r_s, max(1.25 + r_s, reach - r_s))
        z = rng.uniform(r_s + 0.05, H - r_s - 0.05)
        c = np.array([r * math.cos(ang), r * math.sin(ang), z])
        c[:2] = np.clip(c[:2], lo[:2] + r_s + 0.01, hi[:2] - r_s - 0.01)
        centers.append(c)
        radii.append(r_s)
    n_surf = 6 + spec.n_boxes + spec.n_spheres
    palette = np.stack([rng.uniform(0.05, 0.45, (n_surf, 3)), rng.uniform(0.55, 0.95, (n_surf, 3))], axis=1)
    noise = ValueNoise(rng)
    fnoise = [ValueNoise(rng) for _ in range(spec.feature_dim)]
    return Scene(
        lo,
        hi,
        np.array(box_lo).reshape(-1, 3),
        np.array(box_hi).reshape(-1, 3),
        np.array(centers).reshape(-1, 3),
        np.array(radii),
        palette,
        noise,
        fnoise,
        spec.texture_frequency,
        spec.texture_octaves,
        spec.checker_size,
        spec.checker_weight,
    )


# -- cameras and rendering ----------------------------------------------------


def look_pose(position: NDArray, yaw: float, pitch: float) -> RigidTransform:
    """Camera-to-world pose looking along ``(yaw, pitch)`` with world z up."""
    f = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
    r = np.cross(f, [0.0, 0.0, 1.0])
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    return RigidTransform(np.stack([r, d, f], axis=1), np.asarray(position, dtype=np.float64))


@dataclass(frozen=True)
class _Sweep:
    position: NDArray
    yaw: float
    pitch: float

    def poses(self, spec: SceneSpec) -> list[RigidTransform]:
        n = spec.frames_per_side
        right = np.array([math.sin(self.yaw), -math.cos(self.yaw), 0.0])
        out = []
        for i in range(n):
            s = i / (n - 1) - 0.5 if n > 1 else 0.0
            pos = self.position + s * spec.sweep_translation * right
            out.append(look_pose(pos, self.yaw + math.radians(s * spec.sweep_degrees), self.pitch))
        return out


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    pose: RigidTransform  # camera-to-world
    depth: NDArray
    color: NDArray
    feature_map: NDArray | None


def render_view(
    scene: Scene,
    intr: CameraIntrinsics,
    pose: RigidTransform,
    rng: np.random.Generator | None = None,
    depth_noise: float = 0.0,
    outlier_rate: float = 0.0,
    with_features: bool = False,
) -> RenderedFrame:
    """Ray-cast depth, color and optional features for one camera.

    Noise perturbs depth along the viewing ray; outlier pixels receive a
    uniformly random depth within the valid range of the image. Color and
    features are always those of the true surface point.
    """
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    d_cam = np.stack(
        [(u.reshape(-1) - intr.cx) / intr.fx, (v.reshape(-1) - intr.cy) / intr.fy, np.ones(u.size)], axis=1
    )
    dirs = d_cam @ pose.rotation.T
    t, ids = scene.cast(pose.translation, dirs)
    hit = np.isfinite(t)
    t = np.where(hit, t, 0.0)
    pts = pose.translation + t[:, None] * dirs
    color = np.zeros((u.size, 3))
    color[hit] = scene.albedo(pts[hit], ids[hit])
    fmap = None
    if with_features and scene.feature_noise:
        fmap = np.zeros((u.size, len(scene.feature_noise)))
        fmap[hit] = scene.feature(pts[hit])
        fmap = fmap.reshape(intr.height, intr.width, -1)
    depth = t.copy()
    if rng is not None and (depth_noise > 0 or outlier_rate > 0) and hit.any():
        noisy = depth + rng.normal(0.0, 1.0, depth.shape) * depth_noise
        lo, hi = depth[hit].min(), depth[hit].max()
        out = rng.random(depth.shape) < outlier_rate
        noisy = np.where(out, rng.uniform(lo, hi, depth.shape), noisy)
        depth = np.where(hit, np.maximum(noisy, 1e-3), 0.0)
    return RenderedFrame(
        pose, depth.reshape(intr.height, intr.width), color.reshape(intr.height, intr.width, 3), fmap
    )


# -- pairs --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticPair:
    """A generated pair in fragment coordinates plus its world placement.

    ``source_world`` / ``target_world`` map fragment coordinates to scene
    coordinates (they are the first camera pose of each sweep).
    """

    spec: SceneSpec
    scene: Scene
    pair: ScenePair
    source_frames: list[CameraView]
    target_frames: list[CameraView]
    source_world: RigidTransform
    target_world: RigidTransform
    gt_correspondences: CorrespondenceSet
    overlap: float
    yaw_offset: float  # degrees between the two sweeps


def _frames(scene, spec, sweep, intr, rng, noisy, features) -> tuple[list[CameraView], RigidTransform]:
    poses = sweep.poses(spec)
    origin = poses[0]
    to_frag = origin.inverse()
    views = []
    for pose in poses:
        fr = render_view(
            scene,
            intr,
            pose,
            rng,
            spec.depth_noise if noisy else 0.0,
            spec.outlier_rate if noisy else 0.0,
            features,
        )
        views.append(CameraView(intr, to_frag @ pose, fr.depth, fr.color, fr.feature_map))
    return views, origin


def _probe_overlap(scene: Scene, spec: SceneSpec, a: _Sweep, b: _Sweep) -> float:
    """Overlap of noise-free, reduced-resolution renders of three frames per side."""
    intr = spec.intrinsics.scaled(spec.width // 2, spec.height // 2)
    lite = replace(spec, frames_per_side=min(3, spec.frames_per_side))
    va, oa = _frames(scene, lite, a, intr, None, False, False)
    vb, ob = _frames(scene, lite, b, intr, None, False, False)
    ca = fuse_views(va, 2 * spec.voxel)
    cb = fuse_views(vb, 2 * spec.voxel)
    return overlap_fraction(ca, cb, ob.inverse() @ oa, 2 * OVERLAP_RADIUS)


def _measure(sa: PointCloud, sb: PointCloud, gt: RigidTransform) -> float:
    return overlap_fraction(sa, sb, gt, OVERLAP_RADIUS)


def _build(scene, spec, a: _Sweep, b: _Sweep, rng) -> tuple:
    intr = spec.intrinsics
    feats = spec.feature_dim > 0
    src_frames, src_world = _frames(scene, spec, a, intr, rng, True, feats)
    tgt_frames, tgt_world = _frames(scene, spec, b, intr, rng, True, feats)
    gt = RigidTransform.identity() if spec.same_camera else tgt_world.inverse() @ src_world
    src = fuse_views(src_frames, spec.voxel)
    tgt = fuse_views(tgt_frames, spec.voxel)
    return src_frames, tgt_frames, src_world, tgt_world, gt, src, tgt


def generate_scene(spec: SceneSpec, views_per_cloud: int = 2, pair_id: str = "pair-000") -> SyntheticPair:
    """Render one pair whose fused clouds overlap by ``spec.overlap`` within tolerance.

    Raises :class:`GenerationError` when no trajectory within
    ``spec.max_attempts`` reaches the target.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed) & (2**64 - 1), 0x5EED]))
    scene = build_scene(spec, rng)
    tried = []
    for attempt in range(spec.max_attempts):
        pos_a = np.array([*rng.uniform(-0.3, 0.3, 2), rng.uniform(1.2, 1.6)])
        a = _Sweep(pos_a, rng.uniform(0, 2 * math.pi), math.radians(rng.uniform(-20, -8)))
        step = rng.normal(0.0, 1.0, 3) * np.array([0.15, 0.15, 0.05])
        sign = 1.0 if rng.random() < 0.5 else -1.0
        pitch_b = math.radians(rng.uniform(-20, -8))
        render_rng = np.random.default_rng(derive_seed(spec.seed, 1000 + attempt))

        def sweep_b(delta_deg: float) -> _Sweep:
            if spec.same_camera:
                return a
            return _Sweep(pos_a + step, a.yaw + sign * math.radians(delta_deg), pitch_b)

        if spec.same_camera:
            delta = 0.0
        else:
            delta = _search_yaw(scene, spec, a, sweep_b)
            if delta is None:
                tried.append(f"attempt {attempt}: target unreachable")
                continue
        b = sweep_b(delta)
        src_frames, tgt_frames, src_world, tgt_world, gt, src, tgt = _build(scene, spec, a, b, render_rng)
        achieved = _measure(src, tgt, gt)
        if abs(achieved - spec.overlap) <= spec.overlap_tolerance or spec.same_camera:
            gt_corrs = nearest_neighbor(
                PointCloud(gt.apply(src.positions)), PointCloud(tgt.positions), GT_RADIUS
            )
            pair = ScenePair(
                pair_id,
                Fragment(src, select_views(src_frames, views_per_cloud)),
                Fragment(tgt, select_views(tgt_frames, views_per_cloud)),
                gt,
                achieved,
            )
            return SyntheticPair(
                spec, scene, pair, src_frames, tgt_frames, src_world, tgt_world, gt_corrs, achieved, delta
            )
        tried.append(f"attempt {attempt}: yaw {delta:.1f} deg gave overlap {achieved:.3f}")
    raise GenerationError(
        f"could not reach overlap {spec.overlap} +/- {spec.overlap_tolerance} with seed {spec.seed} "
        f"({'; '.join(tried)}); try a different seed, a wider tolerance or a longer sweep"
    )


def _search_yaw(scene, spec, a, sweep_b, lo=0.0, hi=180.0, steps=9) -> float | None:
    """Bisection on the yaw offset; overlap decreases (roughly) with the offset."""
    target = spec.overlap
    f_lo = _probe_overlap(scene, spec, a, sweep_b(lo))
    if f_lo < target - spec.overlap_tolerance:
        return None
    if f_lo <= target:
        return lo
    f_hi = _probe_overlap(scene, spec, a, sweep_b(hi))
    if f_hi > target:
        return None
    best, best_err = lo, abs(f_lo - target)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        f = _probe_overlap(scene, spec, a, sweep_b(mid))
        if abs(f - target) < best_err:
            best, best_err = mid, abs(f - target)
        if f > target:
            lo = mid
        else:
            hi = mid
    return best


def generate_suite(n_pairs: int, spec: SceneSpec, views_per_cloud: int = 2) -> list[SyntheticPair]:
    """``n_pairs`` in memory, pair ``i`` seeded by ``derive_seed(spec.seed, i)``."""
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    return [
        generate_scene(replace(spec, seed=derive_seed(spec.seed, i)), views_per_cloud, f"pair-{i:03d}")
        for i in range(n_pairs)
    ]


def generate_benchmark(
    n_pairs: int,
    spec: SceneSpec,
    out_dir: str | Path,
    progress=None,
) -> DatasetManifest:
    """Write ``n_pairs`` seeded pairs in the dataset layout and return the manifest.

    Sequences are ``pair-XXX/source`` and ``pair-XXX/target``; ground truth
    goes to ``pair-XXX/gt.txt``. Depth is stored in millimeters.
    ``progress`` is called with each finished :class:`SyntheticPair`.
    """
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetIOError(f"cannot create {out}: {exc.strerror or exc}") from exc
    write_intrinsics(out / "intrinsics.txt", spec.intrinsics)
    pairs = []
    for i in range(n_pairs):
        pid = f"pair-{i:03d}"
        sp = generate_scene(replace(spec, seed=derive_seed(spec.seed, i)), pair_id=pid)
        for side, frames in (("source", sp.source_frames), ("target", sp.target_frames)):
            seq = f"{pid}/{side}"
            try:
                (out / seq).mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise DatasetIOError(f"cannot create {out / seq}: {exc.strerror or exc}") from exc
            _write_frames(out, seq, frames)
        write_pose(out / pid / "gt.txt", sp.pair.ground_truth)
        n = len(sp.source_frames)
        pairs.append(
            PairDescriptor(
                pid,
                FrameRange(f"{pid}/source", 0, n - 1),
                FrameRange(f"{pid}/target", 0, len(sp.target_frames) - 1),
                f"{pid}/gt.txt",
                round(sp.overlap, 4),
            )
        )
        if progress is not None:
            progress(sp)
    manifest = DatasetManifest(out, "intrinsics.txt", 1000.0, tuple(pairs))
    write_manifest(out / "manifest.txt", manifest)
    return manifest


def _write_frames(root: Path, seq: str, frames: Sequence[CameraView]) -> None:
    for k, view in enumerate(frames):
        write_depth(frame_path(root, seq, k, "depth.png"), view.depth)
        write_color(frame_path(root, seq, k, "color.png"), view.color)
        write_pose(frame_path(root, seq, k, "pose.txt"), view.pose)
        if view.feature_map is not None:
            write_feature_map(frame_path(root, seq, k, "feature.bin"), view.feature_map)
