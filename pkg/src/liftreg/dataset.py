"""RGB-D pair datasets on disk: manifest, frames, poses, fusion and PLY export.

Layout under a dataset root::

    manifest.txt
    intrinsics.txt                  fx fy cx cy width height
    <seq>/frame-000000.depth.png    16-bit, depth * divisor, 0 = invalid
    <seq>/frame-000000.color.png    8-bit RGB
    <seq>/frame-000000.pose.txt     4x4 camera-to-world, row-major
    <seq>/frame-000000.feature.bin  optional precomputed feature map
    <gt>.txt                        4x4 source-fragment to target-fragment

Each sequence has its own world frame. A fragment is the fusion of a frame
range in that frame, and a pair's ground truth maps source fragment
coordinates onto target fragment coordinates.

Manifest grammar (``#`` starts a comment)::

    version 1
    intrinsics <file>
    depth_divisor <float>
    pair <id> <seq>:<first>-<last> <seq>:<first>-<last> <gt_pose_file> [overlap]
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from PIL import Image, UnidentifiedImageError

from .camera import CameraIntrinsics, CameraView, back_project
from .errors import DatasetIOError, FormatError, ManifestVersionError, ValidationError
from .features import _read_text, read_feature_map
from .geometry import PointCloud, RigidTransform, apply_transform, voxel_downsample
from .lift import select_views

__all__ = [
    "MANIFEST_VERSION",
    "FrameRange",
    "PairDescriptor",
    "DatasetManifest",
    "Fragment",
    "ScenePair",
    "read_intrinsics",
    "write_intrinsics",
    "read_pose",
    "write_pose",
    "read_depth",
    "write_depth",
    "read_color",
    "write_color",
    "frame_path",
    "read_manifest",
    "write_manifest",
    "fuse_views",
    "load_frame",
    "load_pair",
    "export_ply",
    "read_ply",
]

MANIFEST_VERSION = 1
DEFAULT_VOXEL = 0.025

# PNG decoding of a hostile file must stay cheap.
_MAX_PIXELS = 1 << 26


def frame_path(root: Path, sequence: str, index: int, kind: str) -> Path:
    """``root/sequence/frame-%06d.<kind>`` with kind in depth.png, color.png, pose.txt, feature.bin."""
    return Path(root) / sequence / f"frame-{index:06d}.{kind}"


# -- small text formats -----------------------------------------------------


def _numbers(path: Path) -> tuple[list[float], list[int]]:
    """All numbers in a text file and the line each came from."""
    values, lines = [], []
    for lineno, raw in enumerate(_read_text(path).splitlines(), start=1):
        for tok in raw.split("#", 1)[0].split():
            try:
                x = float(tok)
            except ValueError as exc:
                raise FormatError(f"non-numeric token {tok!r}", str(path), lineno) from exc
            if not np.isfinite(x):
                raise FormatError(f"non-finite value {tok!r}", str(path), lineno)
            values.append(x)
            lines.append(lineno)
    return values, lines


def read_intrinsics(path: str | Path) -> CameraIntrinsics:
    path = Path(path)
    vals, _ = _numbers(path)
    if len(vals) != 6:
        raise FormatError(f"expected 'fx fy cx cy width height', found {len(vals)} numbers", str(path))
    fx, fy, cx, cy, w, h = vals
    if w != int(w) or h != int(h):
        raise FormatError("width and height must be integers", str(path))
    try:
        return CameraIntrinsics(fx, fy, cx, cy, int(w), int(h))
    except ValueError as exc:
        raise FormatError(str(exc), str(path)) from exc


def write_intrinsics(path: str | Path, intr: CameraIntrinsics) -> None:
    _write_text(path, f"{intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} {intr.width} {intr.height}\n")


def read_pose(path: str | Path) -> RigidTransform:
    """A 4x4 row-major matrix; the last row must be ``0 0 0 1``."""
    path = Path(path)
    vals, lines = _numbers(path)
    if len(vals) != 16:
        raise FormatError(f"expected 16 numbers for a 4x4 pose, found {len(vals)}", str(path), lines[-1] if lines else None)
    M = np.array(vals).reshape(4, 4)
    if not np.allclose(M[3], [0, 0, 0, 1], atol=1e-9):
        raise FormatError("last row of a pose must be 0 0 0 1", str(path), lines[12])
    try:
        return RigidTransform.from_matrix(M)
    except ValueError as exc:
        raise FormatError(f"not a rigid transform: {exc}", str(path)) from exc


def write_pose(path: str | Path, T: RigidTransform) -> None:
    M = T.as_matrix()
    _write_text(path, "".join(" ".join(f"{x:.17g}" for x in row) + "\n" for row in M))


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


# -- images -----------------------------------------------------------------


def _open_image(path: Path) -> Image.Image:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        img = Image.open(io.BytesIO(data))
        if img.width * img.height > _MAX_PIXELS:
            raise FormatError(f"image too large ({img.width}x{img.height})", str(path))
        img.load()
    except FormatError:
        raise
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError, struct.error, EOFError) as exc:
        raise FormatError(f"cannot decode image: {exc}", str(path)) from exc
    except Image.DecompressionBombError as exc:
        raise FormatError(f"image too large: {exc}", str(path)) from exc
    return img


def _check_size(img: Image.Image, path: Path, size: tuple[int, int] | None) -> None:
    if size is not None and (img.width, img.height) != tuple(size):
        raise FormatError(f"image is {img.width}x{img.height}, expected {size[0]}x{size[1]}", str(path))


def read_depth(path: str | Path, divisor: float = 1000.0, size: tuple[int, int] | None = None) -> NDArray[np.float64]:
    """16-bit depth PNG to meters. ``size`` is an optional ``(width, height)`` check."""
    path = Path(path)
    img = _open_image(path)
    if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise FormatError(f"depth image must be 16-bit grayscale, got mode {img.mode}", str(path))
    _check_size(img, path, size)
    raw = np.array(img, dtype=np.int64)
    if raw.min(initial=0) < 0 or raw.max(initial=0) > 65535:
        raise FormatError("depth values outside the 16-bit range", str(path))
    return raw.astype(np.float64) / divisor


def write_depth(path: str | Path, depth: NDArray, divisor: float = 1000.0) -> None:
    d = np.asarray(depth, dtype=np.float64)
    raw = np.floor(d * divisor + 0.5)
    if np.any(raw > 65535) or np.any(raw < 0):
        raise ValueError("depth does not fit a 16-bit PNG at this divisor")
    try:
        Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def read_color(path: str | Path, size: tuple[int, int] | None = None) -> NDArray[np.float64]:
    path = Path(path)
    img = _open_image(path)
    if img.mode not in ("RGB", "RGBA", "L", "P"):
        raise FormatError(f"unsupported color image mode {img.mode}", str(path))
    _check_size(img, path, size)
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_color(path: str | Path, color: NDArray) -> None:
    c = np.clip(np.floor(np.asarray(color, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(c, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


# -- manifest ---------------------------------------------------------------

_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")
_RANGE = re.compile(r"^([A-Za-z0-9_.\-/]+):(\d+)-(\d+)$")


@dataclass(frozen=True)
class FrameRange:
    sequence: str
    first: int
    last: int  # inclusive

    def __post_init__(self):
        if self.first < 0 or self.last < self.first:
            raise ValueError(f"bad frame range {self.first}-{self.last}")

    @property
    def indices(self) -> range:
        return range(self.first, self.last + 1)

    def __str__(self) -> str:
        return f"{self.sequence}:{self.first}-{self.last}"

    @classmethod
    def parse(cls, text: str) -> FrameRange:
        m = _RANGE.match(text)
        if not m or ".." in m.group(1).split("/"):
            raise ValueError(f"bad frame range {text!r}, expected <seq>:<first>-<last>")
        return cls(m.group(1), int(m.group(2)), int(m.group(3)))


@dataclass(frozen=True)
class PairDescriptor:
    pair_id: str
    source: FrameRange
    target: FrameRange
    gt_pose: str
    overlap: float | None = None


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    intrinsics: str = "intrinsics.txt"
    depth_divisor: float = 1000.0
    pairs: tuple[PairDescriptor, ...] = ()
    version: int = MANIFEST_VERSION

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def pair(self, pair_id: str) -> PairDescriptor:
        for p in self.pairs:
            if p.pair_id == pair_id:
                return p
        raise ValidationError(f"unknown pair id {pair_id!r}")

    @property
    def pair_ids(self) -> list[str]:
        return [p.pair_id for p in self.pairs]

    def referenced_files(self) -> list[Path]:
        files = [self.root / self.intrinsics]
        for p in self.pairs:
            files.append(self.root / p.gt_pose)
            for rng in (p.source, p.target):
                for i in rng.indices:
                    for kind in ("depth.png", "color.png", "pose.txt"):
                        files.append(frame_path(self.root, rng.sequence, i, kind))
        return files

    def missing_files(self) -> list[Path]:
        return [f for f in dict.fromkeys(self.referenced_files()) if not f.is_file()]


def read_manifest(path: str | Path, validate: bool = True) -> DatasetManifest:
    """Parse a manifest file. Relative paths resolve against its directory.

    With ``validate`` every referenced file must exist; otherwise a
    :class:`ValidationError` lists the missing ones.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    text = _read_text(path)
    version = None
    intrinsics = "intrinsics.txt"
    divisor = 1000.0
    pairs: list[PairDescriptor] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        key, args = parts[0], parts[1:]

        def bad(msg: str):
            return FormatError(msg, str(path), lineno)

        if version is None and key != "version":
            raise bad("manifest must start with a 'version' line")
        if key == "version":
            if version is not None or len(args) != 1:
                raise bad("malformed version line")
            try:
                version = int(args[0])
            except ValueError as exc:
                raise bad(f"bad version {args[0]!r}") from exc
            if version != MANIFEST_VERSION:
                raise ManifestVersionError(
                    f"unsupported manifest version {version} (this reader handles {MANIFEST_VERSION})",
                    str(path),
                    lineno,
                )
        elif key == "intrinsics":
            if len(args) != 1:
                raise bad("expected 'intrinsics <file>'")
            intrinsics = args[0]
        elif key == "depth_divisor":
            try:
                divisor = float(args[0]) if len(args) == 1 else float("nan")
            except ValueError:
                divisor = float("nan")
            if not (np.isfinite(divisor) and divisor > 0):
                raise bad("depth_divisor must be one positive number")
        elif key == "pair":
            if len(args) not in (4, 5):
                raise bad("expected 'pair <id> <src> <tgt> <gt_pose_file> [overlap]'")
            pid = args[0]
            if not _ID.match(pid):
                raise bad(f"bad pair id {pid!r}")
            if pid in seen:
                raise bad(f"duplicate pair id {pid!r}")
            try:
                src, tgt = FrameRange.parse(args[1]), FrameRange.parse(args[2])
            except ValueError as exc:
                raise bad(str(exc)) from exc
            overlap = None
            if len(args) == 5:
                try:
                    overlap = float(args[4])
                except ValueError as exc:
                    raise bad(f"bad overlap {args[4]!r}") from exc
                if not 0.0 <= overlap <= 1.0:
                    raise bad(f"overlap {overlap} outside [0, 1]")
            seen.add(pid)
            pairs.append(PairDescriptor(pid, src, tgt, args[3], overlap))
        else:
            raise bad(f"unknown directive {key!r}")
    if version is None:
        raise FormatError("empty manifest (no version line)", str(path))
    manifest = DatasetManifest(path.parent, intrinsics, divisor, tuple(pairs), version)
    if validate:
        missing = manifest.missing_files()
        if missing:
            shown = ", ".join(str(m) for m in missing[:10])
            more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
            raise ValidationError(f"manifest {path} references missing files: {shown}{more}")
    return manifest


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    lines = [
        f"version {manifest.version}",
        f"intrinsics {manifest.intrinsics}",
        f"depth_divisor {manifest.depth_divisor!r}",
    ]
    for p in manifest.pairs:
        line = f"pair {p.pair_id} {p.source} {p.target} {p.gt_pose}"
        if p.overlap is not None:
            line += f" {p.overlap!r}"
        lines.append(line)
    _write_text(path, "\n".join(lines) + "\n")


# -- fusion and pairs -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Fragment:
    """A fused point cloud plus the views chosen for feature lifting."""

    cloud: PointCloud
    views: list[CameraView] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ScenePair:
    pair_id: str
    source: Fragment
    target: Fragment
    ground_truth: RigidTransform
    overlap_hint: float | None = None


def fuse_views(views: Sequence[CameraView], voxel: float = DEFAULT_VOXEL) -> PointCloud:
    """Back-project every view, concatenate, and voxel-downsample."""
    clouds = [back_project(v) for v in views]
    return voxel_downsample(PointCloud.concatenate(clouds), voxel)


def load_frame(
    root: Path,
    sequence: str,
    index: int,
    intr: CameraIntrinsics,
    divisor: float = 1000.0,
    feature_dir: Path | None = None,
    with_color: bool = True,
) -> CameraView:
    size = (intr.width, intr.height)
    depth = read_depth(frame_path(root, sequence, index, "depth.png"), divisor, size)
    pose = read_pose(frame_path(root, sequence, index, "pose.txt"))
    if with_color:
        color = read_color(frame_path(root, sequence, index, "color.png"), size)
    else:
        color = np.zeros(depth.shape + (3,))
    fmap = None
    fpath = frame_path(feature_dir if feature_dir is not None else root, sequence, index, "feature.bin")
    if feature_dir is not None or fpath.is_file():
        fmap = read_feature_map(fpath)
        if fmap.shape[:2] != depth.shape:
            raise FormatError(f"feature map is {fmap.shape[1]}x{fmap.shape[0]}, expected {size[0]}x{size[1]}", str(fpath))
    return CameraView(intr, pose, depth, color, fmap)


def _fragment(
    manifest: DatasetManifest,
    rng: FrameRange,
    intr: CameraIntrinsics,
    views_per_cloud: int,
    voxel: float,
    feature_dir: Path | None,
) -> Fragment:
    indices = list(rng.indices)
    chosen = set(select_views(indices, views_per_cloud))
    clouds, views = [], []
    for i in indices:
        pick = i in chosen
        view = load_frame(
            manifest.root,
            rng.sequence,
            i,
            intr,
            manifest.depth_divisor,
            feature_dir if pick else None,
            with_color=True,
        )
        clouds.append(back_project(view))
        if pick:
            views.append(view)
    cloud = voxel_downsample(PointCloud.concatenate(clouds), voxel)
    return Fragment(cloud, views)


def load_pair(
    manifest: DatasetManifest,
    pair_id: str,
    views_per_cloud: int = 2,
    voxel: float = DEFAULT_VOXEL,
    feature_dir: str | Path | None = None,
) -> ScenePair:
    """Fuse both fragments of a pair and attach the views used for lifting.

    The views are the first and last frames of each range (or evenly spaced
    frames for ``views_per_cloud`` other than 2).
    """
    desc = manifest.pair(pair_id)
    intr = read_intrinsics(manifest.root / manifest.intrinsics)
    fdir = None if feature_dir is None else Path(feature_dir)
    source = _fragment(manifest, desc.source, intr, views_per_cloud, voxel, fdir)
    target = _fragment(manifest, desc.target, intr, views_per_cloud, voxel, fdir)
    gt = read_pose(manifest.root / desc.gt_pose)
    return ScenePair(desc.pair_id, source, target, gt, desc.overlap)


# -- PLY --------------------------------------------------------------------


def export_ply(
    cloud: PointCloud, path: str | Path, apply: RigidTransform | None = None, binary: bool = False
) -> None:
    """Write xyz as float32, plus uchar RGB when the cloud has colors."""
    if apply is not None:
        cloud = apply_transform(cloud, apply)
    pos = cloud.positions.astype("<f4")
    has_rgb = cloud.colors is not None
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(cloud)}"]
    header += ["property float x", "property float y", "property float z"]
    if has_rgb:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        rgb = np.clip(np.floor(cloud.colors * 255.0 + 0.5), 0, 255).astype(np.uint8)
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
        if has_rgb:
            fields += [("r", "u1"), ("g", "u1"), ("b", "u1")]
        rec = np.empty(len(cloud), dtype=fields)
        rec["x"], rec["y"], rec["z"] = pos.T
        if has_rgb:
            rec["r"], rec["g"], rec["b"] = rgb.T
        body = rec.tobytes()
    else:
        rows = []
        for i in range(len(cloud)):
            row = " ".join(repr(float(x)) for x in pos[i])
            if has_rgb:
                row += " " + " ".join(str(int(c)) for c in rgb[i])
            rows.append(row + "\n")
        body = "".join(rows).encode("ascii")
    try:
        Path(path).write_bytes(head + body)
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_ply(path: str | Path) -> PointCloud:
    """Read the subset of PLY written by :func:`export_ply`."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file", str(path))
    try:
        header = data[:end].decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError("non-ASCII PLY header", str(path)) from exc
    body = data[end + len(b"end_header\n") :]
    fmt, n, props = None, None, []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format" and len(parts) == 3:
            fmt = parts[1]
        elif parts[:2] == ["element", "vertex"] and len(parts) == 3 and parts[2].isdigit():
            n = int(parts[2])
        elif parts[0] == "property" and len(parts) == 3 and n is not None:
            props.append((parts[2], parts[1]))
        else:
            raise FormatError(f"unsupported PLY header line {line!r}", str(path))
    names = [p[0] for p in props]
    if fmt not in ("ascii", "binary_little_endian") or n is None or names[:3] != ["x", "y", "z"]:
        raise FormatError("PLY must hold a vertex element with float x y z", str(path))
    types = {"float": "<f4", "double": "<f8", "uchar": "u1"}
    rgb = names[3:] == ["red", "green", "blue"]
    if len(names) not in (3, 6) or (len(names) == 6 and not rgb) or any(t not in types for _, t in props):
        raise FormatError("unsupported PLY vertex properties", str(path))
    dtype = np.dtype([(name, types[t]) for name, t in props])
    if fmt == "binary_little_endian":
        if len(body) != n * dtype.itemsize:
            raise FormatError(f"expected {n} vertices, body has {len(body)} bytes", str(path))
        rec = np.frombuffer(body, dtype=dtype, count=n)
        pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1) / 255.0 if rgb else None
    else:
        try:
            rows = body.decode("ascii").split()
            vals = np.array(rows, dtype=np.float64)
        except (UnicodeDecodeError, ValueError) as exc:
            raise FormatError("bad ASCII PLY body", str(path)) from exc
        if vals.size != n * len(names):
            raise FormatError(f"expected {n * len(names)} values, found {vals.size}", str(path))
        vals = vals.reshape(n, len(names))
        pos = vals[:, :3].astype("<f4").astype(np.float64)
        cols = vals[:, 3:] / 255.0 if rgb else None
    if not np.all(np.isfinite(pos)):
        raise FormatError("non-finite vertex position", str(path))
    return PointCloud(pos, colors=cols)
