"""Pinhole cameras: back-projection, projection and depth-consistency visibility.

Pixel ``(u, v)`` has its center at integer coordinates; ``u`` is the column
and ``v`` the row. Camera frame: x right, y down, z forward. A view's
``pose`` maps camera coordinates to world coordinates (camera-to-world).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import PointCloud, RigidTransform, invert

__all__ = [
    "CameraIntrinsics",
    "CameraView",
    "back_project",
    "project_point",
    "project_points",
    "visible",
    "visible_mask",
    "Visibility",
    "grid_pixels",
    "nearest_pixel",
    "resize_view",
]

DEFAULT_DEPTH_TOLERANCE = 0.05


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (int(self.width) > 0 and int(self.height) > 0):
            raise ValueError("image size must be positive")
        for name in ("fx", "fy", "cx", "cy"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def matrix(self) -> NDArray[np.float64]:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width: int, height: int) -> CameraIntrinsics:
        """Intrinsics for the same camera resampled to ``width`` x ``height``.

        Focal lengths and principal point scale proportionally with the
        image size.
        """
        sx = width / self.width
        sy = height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True, eq=False)
class CameraView:
    """Everything needed to move between one image and the 3D scene.

    depth : (H, W) meters, 0 = invalid
    color : (H, W, 3) RGB in [0, 1]
    feature_map : (H, W, D), optional
    """

    intrinsics: CameraIntrinsics
    pose: RigidTransform
    depth: NDArray[np.float64]
    color: NDArray[np.float64]
    feature_map: NDArray | None = None

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        depth = np.array(self.depth, dtype=np.float64)
        if depth.shape != shape:
            raise ValueError(f"depth shape {depth.shape} does not match intrinsics {shape}")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise ValueError("depth values must be finite and non-negative")
        color = np.array(self.color, dtype=np.float64)
        if color.shape != shape + (3,):
            raise ValueError(f"color shape {color.shape} does not match intrinsics {shape}")
        depth.setflags(write=False)
        color.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "color", color)
        if self.feature_map is not None:
            fmap = np.array(self.feature_map)
            if fmap.ndim == 2:
                fmap = fmap[:, :, None]
            if fmap.shape[:2] != shape or fmap.shape[2] < 1:
                raise ValueError(f"feature map shape {fmap.shape} does not match intrinsics {shape}")
            fmap.setflags(write=False)
            object.__setattr__(self, "feature_map", fmap)

    @property
    def shape(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    @cached_property
    def world_to_camera(self) -> RigidTransform:
        return invert(self.pose)

    @cached_property
    def gray(self) -> NDArray[np.float64]:
        c = self.color
        return 0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2]

    def with_feature_map(self, feature_map: NDArray | None) -> CameraView:
        return CameraView(self.intrinsics, self.pose, self.depth, self.color, feature_map)


def grid_pixels(view: CameraView, stride: int) -> tuple[NDArray, NDArray]:
    """Integer pixels on a ``stride`` grid that carry valid depth."""
    H, W = view.shape
    v, u = np.mgrid[0:H:stride, 0:W:stride]
    u = u.reshape(-1)
    v = v.reshape(-1)
    valid = view.depth[v, u] > 0
    return u[valid], v[valid]


def pixels_to_camera(intr: CameraIntrinsics, u: ArrayLike, v: ArrayLike, depth: ArrayLike) -> NDArray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    return np.stack([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d], axis=-1)


def back_project(view: CameraView, stride: int = 1, return_pixels: bool = False):
    """World-frame points for every valid-depth pixel on a ``stride`` grid.

    Colors are taken from the view's color image. With ``return_pixels`` the
    ``(u, v)`` integer pixel arrays of the emitted points are returned too.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    u, v = grid_pixels(view, int(stride))
    pts = view.pose.apply(pixels_to_camera(view.intrinsics, u, v, view.depth[v, u]))
    cloud = PointCloud(pts.reshape(-1, 3), colors=view.color[v, u].reshape(-1, 3))
    if return_pixels:
        return cloud, (u, v)
    return cloud


_EDGE_EPS = 1e-9


def project_points(view: CameraView, points: ArrayLike) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    """Vectorized projection. Returns ``(u, v, z, ok)``.

    ``ok`` is false where the point is behind the camera or its continuous
    pixel falls outside ``[0, W) x [0, H)``; ``u``, ``v`` are undefined there.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = view.world_to_camera.apply(p)
    z = pc[:, 2]
    intr = view.intrinsics
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, intr.fx * pc[:, 0] / np.where(front, z, 1.0) + intr.cx, np.nan)
        v = np.where(front, intr.fy * pc[:, 1] / np.where(front, z, 1.0) + intr.cy, np.nan)
    # slack absorbs round-off when re-projecting points from column/row 0
    ok = front & (u >= -_EDGE_EPS) & (u < intr.width) & (v >= -_EDGE_EPS) & (v < intr.height)
    return u, v, z, ok


def project_point(view: CameraView, point: ArrayLike) -> tuple[float, float, float] | None:
    """``(u, v, z)`` of a world point, or ``None`` when outside the frustum."""
    u, v, z, ok = project_points(view, point)
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(z[0])


def nearest_pixel(view: CameraView, u: ArrayLike, v: ArrayLike) -> tuple[NDArray, NDArray]:
    """Integer pixel nearest to continuous coordinates, clamped into the image."""
    H, W = view.shape
    ui = np.clip(np.floor(np.asarray(u) + 0.5), 0, W - 1).astype(np.int64)
    vi = np.clip(np.floor(np.asarray(v) + 0.5), 0, H - 1).astype(np.int64)
    return ui, vi


class Visibility(NamedTuple):
    mask: NDArray  # bool, depth-consistent and inside the frame
    u: NDArray  # continuous pixel coordinates (NaN behind the camera)
    v: NDArray
    ui: NDArray  # nearest integer pixel, clamped into the image
    vi: NDArray


def visible_mask(
    view: CameraView, points: ArrayLike, depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE
) -> Visibility:
    """Depth-consistency visibility for many points.

    A point is visible when it projects into the frame, the nearest pixel
    holds valid depth, and that depth is within ``depth_tolerance`` of the
    point's camera-frame z.
    """
    if not depth_tolerance > 0:
        raise ValueError("depth_tolerance must be positive")
    u, v, z, ok = project_points(view, points)
    ui, vi = nearest_pixel(view, np.where(ok, u, 0.0), np.where(ok, v, 0.0))
    d = view.depth[vi, ui]
    mask = ok & (d > 0) & (np.abs(z - d) < depth_tolerance)
    return Visibility(mask, u, v, ui, vi)


def visible(view: CameraView, point: ArrayLike, depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE) -> bool:
    return bool(visible_mask(view, point, depth_tolerance).mask[0])


def resize_view(view: CameraView, height: int, width: int) -> CameraView:
    """Resample a view to a new resolution.

    Depth and feature maps use nearest-neighbour sampling so no depth values
    are invented across discontinuities; color uses bilinear sampling.
    Intrinsics are rescaled proportionally.
    """
    from scipy.ndimage import map_coordinates

    H, W = view.shape
    rows = (np.arange(height) + 0.5) * H / height - 0.5
    cols = (np.arange(width) + 0.5) * W / width - 0.5
    ri = np.clip(np.floor(rows + 0.5), 0, H - 1).astype(np.int64)
    ci = np.clip(np.floor(cols + 0.5), 0, W - 1).astype(np.int64)
    depth = view.depth[np.ix_(ri, ci)]
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    color = np.stack(
        [map_coordinates(view.color[..., k], [rr, cc], order=1, mode="nearest") for k in range(3)], axis=-1
    )
    fmap = None if view.feature_map is None else view.feature_map[np.ix_(ri, ci)]
    return CameraView(view.intrinsics.scaled(width, height), view.pose, depth, np.clip(color, 0, 1), fmap)
