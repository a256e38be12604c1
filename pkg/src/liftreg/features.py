"""2D feature providers and image-to-image correspondences.

Three providers produce per-pixel feature vectors:

- ``RGB``: the pixel color (3 dims).
- ``PATCH``: a 128-dim gradient-orientation histogram over a square window
  (8 orientation bins on a 4x4 grid of cells), deterministic and cheap.
- ``PRECOMPUTED``: bilinear samples of a dense feature map attached to the
  view, e.g. exported from a pretrained network.

``match_images`` pairs grid keypoints of two images by mutual nearest
neighbour plus a two-sided ratio test. External matchers plug in through
the plain-text correspondence file read by ``load_correspondences``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from .camera import CameraView, grid_pixels, nearest_pixel
from .errors import ConfigurationError, DatasetIOError, FormatError, ValidationError

__all__ = [
    "FeatureProviderKind",
    "FeatureProvider",
    "Correspondence2D",
    "compute_patch_descriptor",
    "patch_descriptors",
    "feature_at",
    "features_at",
    "dense_features",
    "match_images",
    "load_correspondences",
    "save_correspondences",
    "read_feature_map",
    "write_feature_map",
    "correspondence_pixels",
]

DESCRIPTOR_CELLS = 4
DESCRIPTOR_BINS = 8
DESCRIPTOR_DIM = DESCRIPTOR_CELLS * DESCRIPTOR_CELLS * DESCRIPTOR_BINS


class FeatureProviderKind(str, enum.Enum):
    RGB = "rgb"
    PATCH = "patch"
    PRECOMPUTED = "precomputed"


@dataclass(frozen=True)
class FeatureProvider:
    """Which per-pixel feature to use, with its parameters.

    ``patch_window`` only affects PATCH. ``normalize`` L2-normalizes every
    returned vector. ``path`` names a directory of dense feature maps for
    PRECOMPUTED; it is consumed by the dataset loader, not here.
    """

    kind: FeatureProviderKind = FeatureProviderKind.PATCH
    patch_window: int = 15
    normalize: bool = False
    path: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureProviderKind(self.kind))
        if self.kind is FeatureProviderKind.PATCH:
            _check_window(self.patch_window)

    def dim(self, view: CameraView | None = None) -> int:
        if self.kind is FeatureProviderKind.RGB:
            return 3
        if self.kind is FeatureProviderKind.PATCH:
            return DESCRIPTOR_DIM
        if view is None or view.feature_map is None:
            raise ConfigurationError("PRECOMPUTED features need a view with a feature map")
        return int(view.feature_map.shape[2])


@dataclass(frozen=True)
class Correspondence2D:
    source_pixel: tuple[float, float]
    target_pixel: tuple[float, float]
    confidence: float = 1.0


def _check_window(window: int) -> None:
    if int(window) != window or window < 3 or window % 2 == 0:
        raise ConfigurationError(f"window must be an odd integer >= 3, got {window}")


def _gradients(image: NDArray) -> tuple[NDArray, NDArray]:
    padded = np.pad(np.asarray(image, dtype=np.float64), 1, mode="edge")
    gx = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    gy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return np.hypot(gx, gy), np.arctan2(gy, gx) % (2 * np.pi)


def patch_descriptors(image: ArrayLike, us: ArrayLike, vs: ArrayLike, window: int = 15) -> NDArray[np.float64]:
    """Gradient-orientation histograms at integer pixels ``(us[k], vs[k])``.

    Samples outside the image are clamped to the border. Each descriptor is
    L2-normalized, clamped at 0.2 and renormalized; a patch with no gradient
    gives the zero vector.
    """
    _check_window(window)
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape
    us = np.asarray(us, dtype=np.int64).reshape(-1)
    vs = np.asarray(vs, dtype=np.int64).reshape(-1)
    K = us.shape[0]
    if K == 0:
        return np.zeros((0, DESCRIPTOR_DIM))
    mag, ori = _gradients(image)
    h = window // 2
    off = np.arange(-h, h + 1)
    rows = np.clip(vs[:, None] + off, 0, H - 1)
    cols = np.clip(us[:, None] + off, 0, W - 1)
    m = mag[rows[:, :, None], cols[:, None, :]]
    o = ori[rows[:, :, None], cols[:, None, :]]

    sigma = 0.5 * window
    g = np.exp(-(off[:, None] ** 2 + off[None, :] ** 2) / (2 * sigma**2))
    m = m * g
    cell = (off + h) * DESCRIPTOR_CELLS // window
    cell_idx = (cell[:, None] * DESCRIPTOR_CELLS + cell[None, :]) * DESCRIPTOR_BINS

    a = o * (DESCRIPTOR_BINS / (2 * np.pi))
    b0 = np.floor(a)
    frac = a - b0
    b0 = b0.astype(np.int64) % DESCRIPTOR_BINS
    b1 = (b0 + 1) % DESCRIPTOR_BINS
    base = (np.arange(K) * DESCRIPTOR_DIM)[:, None, None] + cell_idx[None]
    hist = np.bincount((base + b0).ravel(), weights=(m * (1 - frac)).ravel(), minlength=K * DESCRIPTOR_DIM)
    hist += np.bincount((base + b1).ravel(), weights=(m * frac).ravel(), minlength=K * DESCRIPTOR_DIM)
    desc = hist.reshape(K, DESCRIPTOR_DIM)

    norm = np.linalg.norm(desc, axis=1, keepdims=True)
    nz = norm[:, 0] > 1e-12
    desc[~nz] = 0.0
    desc[nz] = np.minimum(desc[nz] / norm[nz], 0.2)
    desc[nz] /= np.linalg.norm(desc[nz], axis=1, keepdims=True)
    return desc


def compute_patch_descriptor(image: ArrayLike, pixel: tuple[int, int], window: int = 15) -> NDArray[np.float64]:
    """128-dim descriptor of the ``window`` x ``window`` patch centered at ``pixel``."""
    return patch_descriptors(image, [pixel[0]], [pixel[1]], window)[0]


def _bilinear(fmap: NDArray, u: NDArray, v: NDArray) -> NDArray:
    H, W = fmap.shape[:2]
    u = np.clip(u, 0.0, W - 1.0)
    v = np.clip(v, 0.0, H - 1.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    du = (u - u0)[:, None]
    dv = (v - v0)[:, None]
    f = fmap.astype(np.float64, copy=False)
    top = f[v0, u0] * (1 - du) + f[v0, u1] * du
    bottom = f[v1, u0] * (1 - du) + f[v1, u1] * du
    return top * (1 - dv) + bottom * dv


def features_at(view: CameraView, us: ArrayLike, vs: ArrayLike, provider: FeatureProvider) -> NDArray[np.float64]:
    """Feature vectors at many pixels of one view, shape (K, D).

    RGB and PATCH read the nearest integer pixel; PRECOMPUTED interpolates
    bilinearly.
    """
    us = np.asarray(us, dtype=np.float64).reshape(-1)
    vs = np.asarray(vs, dtype=np.float64).reshape(-1)
    kind = provider.kind
    if kind is FeatureProviderKind.PRECOMPUTED:
        if view.feature_map is None:
            raise ConfigurationError("PRECOMPUTED provider requires a feature map on the view")
        out = _bilinear(view.feature_map, us, vs)
    else:
        ui, vi = nearest_pixel(view, us, vs)
        if kind is FeatureProviderKind.RGB:
            out = view.color[vi, ui].astype(np.float64)
        else:
            out = patch_descriptors(view.gray, ui, vi, provider.patch_window)
    if provider.normalize and len(out):
        n = np.linalg.norm(out, axis=1, keepdims=True)
        out = np.divide(out, n, out=np.zeros_like(out), where=n > 0)
    return out


def feature_at(view: CameraView, pixel: tuple[float, float], provider: FeatureProvider) -> NDArray[np.float64]:
    """Feature vector of one pixel; see :func:`features_at`."""
    H, W = view.shape
    u, v = pixel
    if not (0 <= u < W and 0 <= v < H):
        raise ValueError(f"pixel {pixel} outside image of size {W}x{H}")
    return features_at(view, [u], [v], provider)[0]


def dense_features(view: CameraView, provider: FeatureProvider) -> NDArray[np.float64]:
    """Features for every pixel, shape (H, W, D)."""
    H, W = view.shape
    v, u = np.mgrid[0:H, 0:W]
    return features_at(view, u.ravel(), v.ravel(), provider).reshape(H, W, -1)


def _ratios(d: NDArray) -> tuple[NDArray, NDArray]:
    """Nearest index and best/second-best ratio along the last axis."""
    best = np.argmin(d, axis=1)
    if d.shape[1] < 2:
        return best, np.zeros(d.shape[0])
    two = np.partition(d, 1, axis=1)[:, :2]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(two[:, 1] > 0, two[:, 0] / two[:, 1], 1.0)
    return best, r


def match_images(
    view_a: CameraView,
    view_b: CameraView,
    provider: FeatureProvider = FeatureProvider(),
    keypoint_stride: int = 8,
    ratio: float = 0.8,
    min_confidence: float = 0.0,
    max_matches: int | None = None,
) -> list[Correspondence2D]:
    """Mutual-nearest-neighbour matches between grid keypoints of two images.

    Keypoints sit on a ``keypoint_stride`` grid restricted to valid depth.
    A pair survives when it is a mutual nearest neighbour and its
    best/second-best distance ratio is below ``ratio`` in both directions,
    which makes the result symmetric in ``(view_a, view_b)``. Confidence is
    ``1 - max(ratio_ab, ratio_ba)``.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must lie in (0, 1]")
    if keypoint_stride < 1:
        raise ValueError("keypoint_stride must be >= 1")
    ua, va = grid_pixels(view_a, int(keypoint_stride))
    ub, vb = grid_pixels(view_b, int(keypoint_stride))
    if len(ua) == 0 or len(ub) == 0:
        return []
    da = features_at(view_a, ua, va, provider)
    db = features_at(view_b, ub, vb, provider)
    if da.shape[1] != db.shape[1]:
        raise ConfigurationError("feature dimensions differ between the two views")
    # exact differences: identical descriptors must give distance 0
    d = cdist(da, db)
    nn_ab, r_ab = _ratios(d)
    nn_ba, r_ba = _ratios(d.T)
    i = np.arange(len(ua))
    mutual = nn_ba[nn_ab] == i
    r = np.maximum(r_ab, r_ba[nn_ab])
    conf = 1.0 - r
    keep = mutual & (r < ratio) & (conf >= min_confidence)
    idx = np.flatnonzero(keep)
    if max_matches is not None and len(idx) > max_matches:
        order = np.argsort(-conf[idx], kind="stable")[:max_matches]
        idx = np.sort(idx[order])
    return [
        Correspondence2D(
            (float(ua[k]), float(va[k])), (float(ub[nn_ab[k]]), float(vb[nn_ab[k]])), float(conf[k])
        )
        for k in idx
    ]


def correspondence_pixels(corrs: Sequence[Correspondence2D], endpoint: str = "source") -> NDArray[np.float64]:
    """(K, 2) array of the ``source`` or ``target`` pixels of 2D matches."""
    if endpoint not in ("source", "target"):
        raise ValueError("endpoint must be 'source' or 'target'")
    attr = "source_pixel" if endpoint == "source" else "target_pixel"
    if not corrs:
        return np.zeros((0, 2))
    return np.array([getattr(c, attr) for c in corrs], dtype=np.float64)


def _read_text(path: Path) -> str:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not an ASCII text file (byte {exc.start})", str(path)) from exc


def load_correspondences(
    path: str | Path,
    size_a: tuple[int, int] | None = None,
    size_b: tuple[int, int] | None = None,
) -> list[Correspondence2D]:
    """Read ``uA vA uB vB confidence`` rows; ``#`` starts a comment.

    ``size_a`` / ``size_b`` are ``(width, height)`` of the two images; when
    given, rows with pixels outside ``[0, width) x [0, height)`` are rejected
    with a :class:`ValidationError` naming the line.
    """
    path = Path(path)
    out = []
    for lineno, raw in enumerate(_read_text(path).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"expected 5 values, found {len(parts)}", str(path), lineno)
        try:
            ua, va, ub, vb, conf = (float(p) for p in parts)
        except ValueError as exc:
            raise FormatError(f"non-numeric value: {exc}", str(path), lineno) from exc
        if not all(np.isfinite([ua, va, ub, vb, conf])):
            raise FormatError("non-finite value", str(path), lineno)
        if not 0.0 <= conf <= 1.0:
            raise ValidationError(f"{path}:{lineno}: confidence {conf} outside [0, 1]")
        for (u, v), size, name in (((ua, va), size_a, "source"), ((ub, vb), size_b, "target")):
            if size is not None and not (0 <= u < size[0] and 0 <= v < size[1]):
                raise ValidationError(
                    f"{path}:{lineno}: {name} pixel ({u}, {v}) outside image {size[0]}x{size[1]}"
                )
        out.append(Correspondence2D((ua, va), (ub, vb), conf))
    return out


def save_correspondences(path: str | Path, corrs: Sequence[Correspondence2D]) -> None:
    lines = ["# uA vA uB vB confidence"]
    for c in corrs:
        values = (*c.source_pixel, *c.target_pixel, c.confidence)
        lines.append(" ".join(repr(float(x)) for x in values))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


_FMAP_HEADER = struct.Struct("<3I")


def write_feature_map(path: str | Path, fmap: ArrayLike) -> None:
    """Write ``height width dim`` as little-endian u32, then f32 values row-major."""
    a = np.asarray(fmap, dtype="<f4")
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError("feature map must be (H, W, D)")
    try:
        with open(path, "wb") as fh:
            fh.write(_FMAP_HEADER.pack(*a.shape))
            fh.write(np.ascontiguousarray(a).tobytes())
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_feature_map(path: str | Path) -> NDArray[np.float32]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(data) < _FMAP_HEADER.size:
        raise FormatError("truncated feature map header", str(path))
    h, w, d = _FMAP_HEADER.unpack_from(data)
    if min(h, w, d) == 0:
        raise FormatError(f"degenerate feature map shape {h}x{w}x{d}", str(path))
    expected = _FMAP_HEADER.size + 4 * h * w * d
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for {h}x{w}x{d} map, found {len(data)}", str(path))
    a = np.frombuffer(data, dtype="<f4", offset=_FMAP_HEADER.size).reshape(h, w, d)
    if not np.all(np.isfinite(a)):
        raise FormatError("feature map contains non-finite values", str(path))
    return a.astype(np.float32)
