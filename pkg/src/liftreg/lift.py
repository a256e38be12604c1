"""Lift per-pixel 2D features onto 3D points.

Two modes share one sampling path:

- implicit: every point visible in a view takes that view's feature at its
  projected pixel;
- explicit: as implicit, but a view only contributes where the projected
  pixel lies inside the union of square windows centered on that view's
  2D correspondence pixels. The covered set therefore approximates the
  overlap region estimated from color.

A point seen by several views gets the mean of their samples. Points with no
sample keep a zero vector and are flagged uncovered. The output features are
``[1 | lifted]``: a constant geometric placeholder followed by the lifted
block, so the dimension does not depend on the mode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.ndimage import maximum_filter, uniform_filter

from .camera import DEFAULT_DEPTH_TOLERANCE, CameraView, visible_mask
from .errors import ConfigurationError
from .features import (
    Correspondence2D,
    FeatureProvider,
    FeatureProviderKind,
    correspondence_pixels,
    dense_features,
    features_at,
)
from .geometry import PointCloud

__all__ = [
    "LiftMode",
    "LiftConfig",
    "CoverageMask",
    "AugmentedCloud",
    "lift_implicit",
    "lift_explicit",
    "lift",
    "region_mask",
    "coverage_report",
    "select_views",
    "geometry_only",
]


class LiftMode(str, enum.Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


@dataclass(frozen=True)
class LiftConfig:
    """Parameters of the 2D-to-3D lifting step.

    ``window`` is the side of the square region around each correspondence
    pixel (explicit mode). ``pool`` replaces the per-pixel feature by its
    mean over a ``window`` x ``window`` neighbourhood.
    """

    mode: LiftMode = LiftMode.EXPLICIT
    window: int = 11
    views_per_cloud: int = 2
    depth_tolerance: float = DEFAULT_DEPTH_TOLERANCE
    provider: FeatureProvider = field(default_factory=FeatureProvider)
    pool: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", LiftMode(self.mode))
        if int(self.window) != self.window or self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError(f"window must be odd and >= 3, got {self.window}")
        if self.views_per_cloud < 1:
            raise ConfigurationError("views_per_cloud must be >= 1")
        if not self.depth_tolerance > 0:
            raise ConfigurationError("depth_tolerance must be positive")


@dataclass(frozen=True, eq=False)
class CoverageMask:
    covered: NDArray[np.bool_]

    def __post_init__(self):
        c = np.array(self.covered, dtype=bool).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "covered", c)

    def __len__(self) -> int:
        return self.covered.shape[0]

    @property
    def covered_fraction(self) -> float:
        n = len(self)
        return float(np.count_nonzero(self.covered)) / n if n else 0.0


@dataclass(frozen=True, eq=False)
class AugmentedCloud:
    """A cloud whose features are ``[1 | lifted 2D features]``."""

    cloud: PointCloud
    mask: CoverageMask

    @property
    def lifted(self) -> NDArray[np.float64]:
        return self.cloud.features[:, 1:]

    def __len__(self) -> int:
        return len(self.cloud)


def coverage_report(mask: CoverageMask) -> float:
    """Fraction of points that received lifted features (0 for an empty cloud)."""
    return mask.covered_fraction


def select_views(frames: Sequence, count: int) -> list:
    """Pick ``count`` frames spread evenly over a sequence, first and last included.

    ``count == 1`` gives the first frame; ``count == 2`` the first and last;
    larger counts add evenly spaced frames in between.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = len(frames)
    if n == 0:
        return []
    if count == 1 or n == 1:
        return [frames[0]]
    idx = np.unique(np.floor(np.linspace(0, n - 1, min(count, n)) + 0.5).astype(int))
    return [frames[i] for i in idx]


def region_mask(shape: tuple[int, int], pixels: ArrayLike, window: int) -> NDArray[np.bool_]:
    """Union of ``window`` x ``window`` squares centered at the given pixels.

    Centers are rounded to the nearest integer pixel; squares are clipped at
    the image border. A pixel inside several squares is simply ``True``.
    """
    H, W = shape
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    centers = np.zeros((H, W), dtype=bool)
    if len(px):
        u = np.floor(px[:, 0] + 0.5).astype(np.int64)
        v = np.floor(px[:, 1] + 0.5).astype(np.int64)
        inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
        centers[v[inside], u[inside]] = True
    if not centers.any():
        return centers
    return maximum_filter(centers, size=window, mode="constant", cval=False)


def _view_dims(views: Sequence[CameraView], provider: FeatureProvider) -> int:
    dims = {provider.dim(v) for v in views}
    if len(dims) != 1:
        raise ConfigurationError(f"views provide features of different dimensions: {sorted(dims)}")
    return dims.pop()


def _sample(view: CameraView, vis, idx: NDArray, config: LiftConfig) -> NDArray:
    provider = config.provider
    if config.pool:
        pooled = uniform_filter(dense_features(view, provider), size=(config.window, config.window, 1), mode="nearest")
        return pooled[vis.vi[idx], vis.ui[idx]]
    if provider.kind is FeatureProviderKind.PRECOMPUTED:
        return features_at(view, vis.u[idx], vis.v[idx], provider)
    return features_at(view, vis.ui[idx], vis.vi[idx], provider)


def _lift(
    cloud: PointCloud,
    views: Sequence[CameraView],
    config: LiftConfig,
    regions: Sequence[NDArray] | None,
) -> AugmentedCloud:
    if not views:
        raise ConfigurationError("lifting needs at least one view")
    dim = _view_dims(views, config.provider)
    n = len(cloud)
    total = np.zeros((n, dim))
    count = np.zeros(n, dtype=np.int64)
    for k, view in enumerate(views):
        if n == 0:
            break
        vis = visible_mask(view, cloud.positions, config.depth_tolerance)
        take = vis.mask
        if regions is not None:
            take = take & regions[k][vis.vi, vis.ui]
        idx = np.flatnonzero(take)
        if len(idx) == 0:
            continue
        total[idx] += _sample(view, vis, idx, config)
        count[idx] += 1
    covered = count > 0
    lifted = np.zeros((n, dim))
    lifted[covered] = total[covered] / count[covered, None]
    feats = np.hstack([np.ones((n, 1)), lifted])
    return AugmentedCloud(PointCloud(cloud.positions, feats, cloud.colors), CoverageMask(covered))


def lift_implicit(cloud: PointCloud, views: Sequence[CameraView], config: LiftConfig) -> AugmentedCloud:
    """Give every visible point the feature at its projected pixel, averaged over views."""
    if config.mode is not LiftMode.IMPLICIT:
        raise ConfigurationError("lift_implicit requires mode IMPLICIT")
    return _lift(cloud, views, config, None)


def lift_explicit(
    cloud: PointCloud,
    views: Sequence[CameraView],
    corrs: Sequence[Sequence[Correspondence2D]],
    config: LiftConfig,
    endpoint: str = "source",
) -> AugmentedCloud:
    """Lift features only inside windows around each view's correspondence pixels.

    ``corrs[k]`` holds the 2D matches involving ``views[k]``; ``endpoint``
    says which side of each match lies in this cloud's images (``"source"``
    or ``"target"``).
    """
    if config.mode is not LiftMode.EXPLICIT:
        raise ConfigurationError("lift_explicit requires mode EXPLICIT")
    if len(corrs) != len(views):
        raise ConfigurationError(f"got {len(corrs)} correspondence lists for {len(views)} views")
    regions = [
        region_mask(view.shape, correspondence_pixels(c, endpoint), config.window) for view, c in zip(views, corrs)
    ]
    return _lift(cloud, views, config, regions)


def lift(
    cloud: PointCloud,
    views: Sequence[CameraView],
    config: LiftConfig,
    corrs: Sequence[Sequence[Correspondence2D]] | None = None,
    endpoint: str = "source",
) -> AugmentedCloud:
    """Dispatch on ``config.mode``."""
    if config.mode is LiftMode.IMPLICIT:
        return lift_implicit(cloud, views, config)
    if corrs is None:
        raise ConfigurationError("explicit lifting needs 2D correspondences")
    return lift_explicit(cloud, views, corrs, config, endpoint)


def geometry_only(cloud: PointCloud) -> AugmentedCloud:
    """The colorless baseline: every point carries only the constant placeholder."""
    n = len(cloud)
    return AugmentedCloud(PointCloud(cloud.positions, np.ones((n, 1)), cloud.colors), CoverageMask(np.zeros(n, bool)))
