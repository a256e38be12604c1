"""Rigid transforms, point clouds, nearest neighbours and voxel downsampling.

Conventions
-----------
- Distances are meters everywhere.
- Rotations are stored as 3x3 matrices. A :class:`RigidTransform` maps a
  point ``p`` to ``R @ p + t``.
- ``compose(A, B)`` applies ``B`` first, then ``A`` (same as ``A @ B``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

__all__ = [
    "RigidTransform",
    "PointCloud",
    "Correspondence3D",
    "CorrespondenceSet",
    "NeighborIndex",
    "apply_transform",
    "compose",
    "invert",
    "nearest_neighbor",
    "voxel_downsample",
    "overlap_fraction",
    "rotation_about_axis",
]

_ORTHO_TOL = 1e-6


def _frozen(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


def _polar(R: NDArray) -> NDArray:
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion of 3-space (an element of SE(3)).

    The rotation is validated at construction: it must be orthonormal to
    1e-6 with positive determinant. Small drift is removed by projecting onto
    the nearest rotation (polar decomposition), so stored rotations satisfy
    ``|R^T R - I|_inf < 1e-9``.
    """

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform must be finite")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > _ORTHO_TOL or np.linalg.det(R) <= 0:
            raise ValueError(
                f"rotation is not a proper rotation (orthogonality error {err:.3g}, "
                f"det {np.linalg.det(R):.6g})"
            )
        if err > 1e-12:
            R = _polar(R)
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> RigidTransform:
        """Build from a 4x4 homogeneous matrix. The bottom row must be (0,0,0,1)."""
        M = np.asarray(matrix, dtype=np.float64)
        if M.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {M.shape}")
        if not np.allclose(M[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("bottom row of a rigid transform must be (0, 0, 0, 1)")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_translation(cls, t: ArrayLike) -> RigidTransform:
        return cls(np.eye(3), t)

    def as_matrix(self) -> NDArray[np.float64]:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        """Transform an (N, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        return invert(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def rotation_about_axis(axis: ArrayLike, degrees: float) -> NDArray[np.float64]:
    """Rodrigues rotation matrix for a rotation of ``degrees`` about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    theta = np.deg2rad(degrees)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Transform that applies ``B`` first and then ``A``."""
    return RigidTransform(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def invert(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions with optional per-point feature vectors and RGB colors.

    Parameters
    ----------
    positions : (N, 3) array, meters
    features : (N, D) array, optional
    colors : (N, 3) array in [0, 1], optional
    """

    positions: NDArray[np.float64]
    features: NDArray[np.float64] | None = None
    colors: NDArray[np.float64] | None = None

    def __post_init__(self):
        P = np.array(self.positions, dtype=np.float64)
        if P.size == 0:
            P = P.reshape(0, 3)
        if P.ndim != 2 or P.shape[1] != 3:
            raise ValueError(f"positions must have shape (N, 3), got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "positions", _frozen(P))
        n = P.shape[0]
        if self.features is not None:
            F = np.array(self.features, dtype=np.float64)
            if F.ndim == 1:
                F = F.reshape(n, -1) if n else F.reshape(0, max(F.size, 1))
            if F.ndim != 2 or F.shape[0] != n or F.shape[1] < 1:
                raise ValueError(f"features must have shape ({n}, D>=1), got {F.shape}")
            object.__setattr__(self, "features", _frozen(F))
        if self.colors is not None:
            C = np.array(self.colors, dtype=np.float64)
            if C.size == 0:
                C = C.reshape(0, 3)
            if C.shape != (n, 3):
                raise ValueError(f"colors must have shape ({n}, 3), got {C.shape}")
            object.__setattr__(self, "colors", _frozen(C))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def select(self, index: ArrayLike) -> PointCloud:
        idx = np.asarray(index)
        return PointCloud(
            self.positions[idx],
            None if self.features is None else self.features[idx],
            None if self.colors is None else self.colors[idx],
        )

    def with_features(self, features: ArrayLike | None) -> PointCloud:
        return PointCloud(self.positions, features, self.colors)

    @staticmethod
    def concatenate(clouds: Sequence[PointCloud]) -> PointCloud:
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pos = np.concatenate([c.positions for c in clouds])
        feats = None
        if all(c.features is not None for c in clouds):
            feats = np.concatenate([c.features for c in clouds])
        cols = None
        if all(c.colors is not None for c in clouds):
            cols = np.concatenate([c.colors for c in clouds])
        return PointCloud(pos, feats, cols)


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    """Map positions through ``T``; features and colors are carried unchanged."""
    return PointCloud(T.apply(cloud.positions), cloud.features, cloud.colors)


@dataclass(frozen=True)
class Correspondence3D:
    source_index: int
    target_index: int
    score: float


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Index pairs between two clouds, stored column-wise.

    Iterating yields :class:`Correspondence3D` records; slicing returns a new
    set. Higher ``score`` means more confident.
    """

    source: NDArray[np.int64]
    target: NDArray[np.int64]
    score: NDArray[np.float64] | None = None

    def __post_init__(self):
        s = np.asarray(self.source, dtype=np.int64).reshape(-1)
        t = np.asarray(self.target, dtype=np.int64).reshape(-1)
        if s.shape != t.shape:
            raise ValueError("source and target index arrays differ in length")
        sc = np.zeros(s.shape) if self.score is None else np.asarray(self.score, dtype=np.float64).reshape(-1)
        if sc.shape != s.shape:
            raise ValueError("score array length differs from index arrays")
        object.__setattr__(self, "source", _frozen(s))
        object.__setattr__(self, "target", _frozen(t))
        object.__setattr__(self, "score", _frozen(sc))

    @classmethod
    def empty(cls) -> CorrespondenceSet:
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def from_records(cls, records: Sequence[Correspondence3D]) -> CorrespondenceSet:
        return cls(
            [c.source_index for c in records],
            [c.target_index for c in records],
            [c.score for c in records],
        )

    def __len__(self) -> int:
        return self.source.shape[0]

    def __iter__(self) -> Iterator[Correspondence3D]:
        for s, t, sc in zip(self.source.tolist(), self.target.tolist(), self.score.tolist()):
            yield Correspondence3D(s, t, sc)

    def __getitem__(self, item) -> CorrespondenceSet:
        if isinstance(item, (int, np.integer)):
            item = slice(item, item + 1 if item != -1 else None)
        return CorrespondenceSet(self.source[item], self.target[item], self.score[item])

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.source.tolist(), self.target.tolist()))

    def check_bounds(self, n_source: int, n_target: int) -> None:
        if len(self) and (
            self.source.min() < 0 or self.source.max() >= n_source
            or self.target.min() < 0 or self.target.max() >= n_target
        ):
            raise IndexError("correspondence index out of bounds of its cloud")


class NeighborIndex:
    """KD-tree over a fixed set of reference points (any dimension, default 3).

    Queries return, per query point, the nearest reference point strictly
    closer than ``radius``. Exact ties resolve to the lowest reference index.
    The tree is built once; queries do not mutate it.
    """

    _K = 4

    def __init__(self, reference: ArrayLike):
        ref = np.asarray(reference, dtype=np.float64)
        self.reference = ref if ref.ndim == 2 else ref.reshape(-1, 3)
        # Duplicate rows collapse onto their first occurrence, which is the
        # answer the tie rule wants anyway and keeps tie scans rare.
        if len(self.reference):
            self._unique, self._first = np.unique(self.reference, axis=0, return_index=True)
            self._tree = cKDTree(self._unique)
        else:
            self._tree = None

    def query(self, points: ArrayLike, radius: float = np.inf) -> tuple[NDArray, NDArray]:
        """Return ``(distances, indices)``; ``indices`` is -1 where none is in range."""
        q = np.asarray(points, dtype=np.float64).reshape(-1, self.reference.shape[1])
        n = q.shape[0]
        dist = np.full(n, np.inf)
        idx = np.full(n, -1, dtype=np.int64)
        if self._tree is None or n == 0:
            return dist, idx
        uniq, first = self._unique, self._first
        m = len(uniq)
        k = min(self._K, m)
        bound = radius * (1.0 + 1e-9) if np.isfinite(radius) else np.inf
        d_kd, i_kd = self._tree.query(q, k=k, distance_upper_bound=bound)
        d_kd = d_kd.reshape(n, k)
        i_kd = i_kd.reshape(n, k)
        found = i_kd < m
        # Recompute candidate distances with one fixed formula so that results
        # are independent of the tree's internal arithmetic.
        safe = np.where(found, i_kd, 0)
        diff = uniq[safe] - q[:, None, :]
        d_exact = np.sqrt((diff * diff).sum(axis=2))
        d_exact[~found] = np.inf
        best = d_exact.min(axis=1)
        tie = (d_exact == best[:, None]) & found
        cand = np.where(tie, first[safe], np.iinfo(np.int64).max)
        choice = cand.min(axis=1)
        ok = np.isfinite(best) & (best < radius)
        dist[ok] = best[ok]
        idx[ok] = choice[ok]
        # All k candidates tied (or clipped): settle by a full scan for those rows.
        if k < m:
            crowded = ok & tie.all(axis=1)
            for row in np.flatnonzero(crowded):
                d_all = np.sqrt(((uniq - q[row]) ** 2).sum(axis=1))
                dmin = d_all.min()
                dist[row] = dmin
                idx[row] = first[d_all == dmin].min()
        return dist, idx


def nearest_neighbor(query: PointCloud, reference: PointCloud, radius: float) -> CorrespondenceSet:
    """For each query point, its nearest reference point closer than ``radius``.

    Query points without a neighbour in range are omitted. Scores are the
    negated distances.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    dist, idx = NeighborIndex(reference.positions).query(query.positions, radius)
    keep = np.flatnonzero(idx >= 0)
    return CorrespondenceSet(keep, idx[keep], -dist[keep])


def voxel_downsample(cloud: PointCloud, voxel: float, origin: ArrayLike = (0.0, 0.0, 0.0)) -> PointCloud:
    """One point per occupied voxel, at the centroid of its members.

    Features and colors are averaged per voxel. Voxel ``k`` spans
    ``origin + voxel * [k, k + 1)`` on each axis. Output is ordered by voxel
    key, so the result does not depend on input order.
    """
    if not voxel > 0:
        raise ValueError("voxel size must be positive")
    n = len(cloud)
    if n == 0:
        return cloud
    keys = np.floor((cloud.positions - np.asarray(origin, dtype=np.float64)) / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n_vox = counts.shape[0]

    def mean(values: NDArray) -> NDArray:
        out = np.empty((n_vox, values.shape[1]))
        for j in range(values.shape[1]):
            out[:, j] = np.bincount(inverse, weights=values[:, j], minlength=n_vox)
        return out / counts[:, None]

    feats = None if cloud.features is None else mean(cloud.features)
    cols = None if cloud.colors is None else mean(cloud.colors)
    return PointCloud(mean(cloud.positions), feats, cols)


def overlap_fraction(source: PointCloud, target: PointCloud, transform: RigidTransform, radius: float = 0.05) -> float:
    """Mean of the two directional coverages of a registered pair.

    Coverage of the source is the fraction of transformed source points with
    a target point closer than ``radius``; target coverage likewise.
    """
    if len(source) == 0 or len(target) == 0:
        return 0.0
    moved = transform.apply(source.positions)
    _, i_st = NeighborIndex(target.positions).query(moved, radius)
    _, i_ts = NeighborIndex(moved).query(target.positions, radius)
    return 0.5 * (float(np.mean(i_st >= 0)) + float(np.mean(i_ts >= 0)))
