"""Correspondence search and rigid transform estimation.

The pipeline is correspondences first, transformation second:
``match_features`` pairs points by feature distance, ``ransac_register``
fits a rigid motion robustly to those pairs, and ``icp_refine`` optionally
polishes a pose by point-to-point ICP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigurationError, DegenerateSampleError, InsufficientInputError
from .geometry import CorrespondenceSet, NeighborIndex, PointCloud, RigidTransform
from .lift import AugmentedCloud
from .metrics import relative_errors

__all__ = [
    "RansacConfig",
    "RegistrationResult",
    "match_features",
    "estimate_rigid",
    "ransac_register",
    "icp_refine",
]

# Hypotheses scored per batch; fixed so early termination is deterministic.
_BATCH = 500
_DEGENERACY = 1e-9
# Above this feature dimension a blocked brute-force scan beats the KD-tree.
_KD_MAX_DIM = 8


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC parameters.

    ``iterations`` is a cap: with ``confidence`` set, the loop stops early
    once the standard bound ``log(1 - confidence) / log(1 - w**sample_size)``
    (``w`` = best inlier fraction so far) is reached, checked every 500
    hypotheses.
    """

    iterations: int = 50_000
    inlier_threshold: float = 0.05
    sample_size: int = 3
    seed: int = 0
    min_inliers: int = 10
    confidence: float | None = 0.999

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if not self.inlier_threshold > 0:
            raise ConfigurationError("inlier_threshold must be positive")
        if self.sample_size < 3:
            raise ConfigurationError("sample_size must be >= 3")
        if self.confidence is not None and not 0 < self.confidence < 1:
            raise ConfigurationError("confidence must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: RigidTransform
    inlier_indices: NDArray[np.int64]
    iterations_run: int
    converged: bool
    residual_history: tuple[float, ...] = field(default=())


def _cloud_features(c: AugmentedCloud | PointCloud) -> tuple[NDArray, NDArray | None]:
    if isinstance(c, AugmentedCloud):
        return c.cloud.features, c.mask.covered
    if c.features is None:
        raise ConfigurationError("cloud has no features to match")
    return c.features, None


def _nearest(query: NDArray, reference: NDArray) -> tuple[NDArray, NDArray]:
    """Nearest reference row per query row; ties go to the lowest index."""
    if query.shape[1] <= _KD_MAX_DIM:
        return NeighborIndex(reference).query(query)
    rn = (reference * reference).sum(1)
    dist = np.empty(len(query))
    idx = np.empty(len(query), dtype=np.int64)
    for s in range(0, len(query), 1024):
        q = query[s : s + 1024]
        d2 = (q * q).sum(1)[:, None] + rn[None, :] - 2.0 * q @ reference.T
        j = np.argmin(d2, axis=1)
        idx[s : s + 1024] = j
        dist[s : s + 1024] = np.sqrt(np.maximum(d2[np.arange(len(q)), j], 0.0))
    return dist, idx


def match_features(
    cloud_a: AugmentedCloud | PointCloud,
    cloud_b: AugmentedCloud | PointCloud,
    mutual: bool = True,
    top_k: int | None = None,
    covered_only: bool = True,
) -> CorrespondenceSet:
    """Nearest neighbours in feature space (L2), best first.

    Each point of ``cloud_a`` is paired with its nearest ``cloud_b`` point.
    With ``mutual`` only pairs that are nearest neighbours both ways stay.
    Pairs are ranked by score (negated feature distance), ties by source
    index, and truncated to ``top_k``. For augmented clouds with
    ``covered_only``, points that received no lifted features are left out.
    """
    fa, cov_a = _cloud_features(cloud_a)
    fb, cov_b = _cloud_features(cloud_b)
    if fa.shape[1] != fb.shape[1]:
        raise ConfigurationError(f"feature dimensions differ: {fa.shape[1]} vs {fb.shape[1]}")
    ia = np.arange(len(fa)) if cov_a is None or not covered_only else np.flatnonzero(cov_a)
    ib = np.arange(len(fb)) if cov_b is None or not covered_only else np.flatnonzero(cov_b)
    if len(ia) == 0 or len(ib) == 0:
        return CorrespondenceSet.empty()
    qa, qb = fa[ia], fb[ib]
    dist, nn_ab = _nearest(qa, qb)
    keep = np.arange(len(ia))
    if mutual:
        _, nn_ba = _nearest(qb, qa)
        keep = np.flatnonzero(nn_ba[nn_ab] == keep)
    order = keep[np.argsort(dist[keep], kind="stable")]
    if top_k is not None:
        order = order[: max(int(top_k), 0)]
    return CorrespondenceSet(ia[order], ib[nn_ab[order]], -dist[order])


def _kabsch(A: NDArray, B: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    """Batched least-squares rotation and translation taking A onto B.

    A, B have shape (n, k, 3). Returns ``(R, t, ok)`` where ``ok`` flags
    samples whose covariance has rank >= 2.
    """
    ca = A.mean(axis=1)
    cb = B.mean(axis=1)
    H = np.einsum("nki,nkj->nij", A - ca[:, None], B - cb[:, None])
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.einsum("nji,nkj->nik", Vt, U)))
    d[d == 0] = 1.0
    D = np.zeros_like(H)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = np.einsum("nji,njk,nlk->nil", Vt, D, U)
    t = cb - np.einsum("nij,nj->ni", R, ca)
    ok = S[:, 1] > _DEGENERACY * np.maximum(S[:, 0], 1e-300)
    return R, t, ok


def estimate_rigid(source: ArrayLike, target: ArrayLike) -> RigidTransform:
    """Least-squares rigid motion minimizing ``sum |R a_i + t - b_i|^2``.

    Reflections are corrected through the sign of the smallest singular
    direction, so the result is always a proper rotation. Raises
    :class:`DegenerateSampleError` for fewer than three points or when the
    points are collinear or coincident.
    """
    a = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError("source and target must have the same number of points")
    if len(a) < 3:
        raise DegenerateSampleError(f"need at least 3 point pairs, got {len(a)}")
    R, t, ok = _kabsch(a[None], b[None])
    if not ok[0]:
        raise DegenerateSampleError("point sample is collinear or coincident")
    return RigidTransform(R[0], t[0])


def _draw_samples(rng: np.random.Generator, n: int, iterations: int, size: int) -> NDArray:
    """``iterations`` rows of ``size`` distinct indices in ``[0, n)``."""
    idx = rng.integers(0, n, size=(iterations, size))
    while True:
        s = np.sort(idx, axis=1)
        bad = np.flatnonzero((s[:, 1:] == s[:, :-1]).any(axis=1))
        if len(bad) == 0:
            return idx
        idx[bad] = rng.integers(0, n, size=(len(bad), size))


def _score(R: NDArray, t: NDArray, a: NDArray, b: NDArray, thr: float) -> tuple[NDArray, NDArray]:
    P = np.matmul(R, a.T)  # (n, 3, k)
    P += t[:, :, None]
    P -= b.T[None]
    res = np.sqrt((P * P).sum(axis=1))
    inl = res < thr
    count = inl.sum(axis=1)
    mean = np.where(count > 0, (res * inl).sum(axis=1) / np.maximum(count, 1), np.inf)
    return count, mean


def _inliers(T: RigidTransform, a: NDArray, b: NDArray, thr: float) -> tuple[NDArray, float]:
    res = np.linalg.norm(T.apply(a) - b, axis=1)
    idx = np.flatnonzero(res < thr)
    return idx, float(res[idx].mean()) if len(idx) else math.inf


def ransac_register(
    cloud_a: PointCloud | AugmentedCloud,
    cloud_b: PointCloud | AugmentedCloud,
    corrs: CorrespondenceSet,
    config: RansacConfig = RansacConfig(),
) -> RegistrationResult:
    """Robust rigid fit to putative correspondences.

    Each iteration fits ``sample_size`` random pairs by least squares and
    counts residuals below ``inlier_threshold``. The best hypothesis (most
    inliers, then lowest mean inlier residual, then earliest) is refitted on
    its inliers. Samples are drawn up front from ``seed``, so the result does
    not depend on batching. ``inlier_indices`` index into ``corrs``.
    """
    pa = cloud_a.cloud.positions if isinstance(cloud_a, AugmentedCloud) else cloud_a.positions
    pb = cloud_b.cloud.positions if isinstance(cloud_b, AugmentedCloud) else cloud_b.positions
    k = len(corrs)
    if k < config.sample_size:
        raise InsufficientInputError(f"RANSAC needs at least {config.sample_size} correspondences, got {k}")
    corrs.check_bounds(len(pa), len(pb))
    a = pa[corrs.source]
    b = pb[corrs.target]
    rng = np.random.default_rng(config.seed)
    samples = _draw_samples(rng, k, config.iterations, config.sample_size)

    best = (-1, math.inf)
    best_R = best_t = None
    done = 0
    for start in range(0, config.iterations, _BATCH):
        batch = samples[start : start + _BATCH]
        R, t, ok = _kabsch(a[batch], b[batch])
        done = start + len(batch)
        if ok.any():
            count, mean = _score(R[ok], t[ok], a, b, config.inlier_threshold)
            # lexicographic: more inliers, then smaller mean residual, then earlier
            j = np.lexsort((mean, -count))[0]
            if (count[j], -mean[j]) > (best[0], -best[1]):
                best = (int(count[j]), float(mean[j]))
                best_R, best_t = R[ok][j], t[ok][j]
        if config.confidence is not None and best[0] > 0:
            w = best[0] / k
            if w >= 1.0:
                break
            needed = math.log(1 - config.confidence) / math.log(1 - w**config.sample_size)
            if done >= needed:
                break

    if best_R is None:
        return RegistrationResult(RigidTransform.identity(), np.zeros(0, np.int64), done, False)

    T = RigidTransform(best_R, best_t)
    inl, mean = _inliers(T, a, b, config.inlier_threshold)
    if len(inl) >= 3:
        try:
            refit = estimate_rigid(a[inl], b[inl])
        except DegenerateSampleError:
            refit = None
        if refit is not None:
            inl2, mean2 = _inliers(refit, a, b, config.inlier_threshold)
            if (len(inl2), -mean2) >= (len(inl), -mean):
                T, inl = refit, inl2
    return RegistrationResult(T, inl.astype(np.int64), done, len(inl) >= config.min_inliers)


def icp_refine(
    cloud_a: PointCloud | AugmentedCloud,
    cloud_b: PointCloud | AugmentedCloud,
    init: RigidTransform,
    max_iterations: int = 50,
    max_pair_distance: float = 0.1,
) -> RegistrationResult:
    """Point-to-point ICP starting from ``init``.

    Each iteration pairs every transformed source point with its nearest
    target point within ``max_pair_distance`` and refits by least squares.
    A step that would raise the mean pair residual is rejected and ends the
    loop, so ``residual_history`` never increases. Iteration stops once a
    step moves less than 1e-4 degrees and 1e-6 m. ``inlier_indices`` are the
    source indices paired in the final state.
    """
    if max_iterations < 1:
        raise ConfigurationError("max_iterations must be >= 1")
    pa = cloud_a.cloud.positions if isinstance(cloud_a, AugmentedCloud) else cloud_a.positions
    pb = cloud_b.cloud.positions if isinstance(cloud_b, AugmentedCloud) else cloud_b.positions
    index = NeighborIndex(pb)

    def pair(T: RigidTransform):
        d, j = index.query(T.apply(pa), max_pair_distance)
        sel = np.flatnonzero(j >= 0)
        return sel, j[sel], d[sel]

    T = init
    sel, tgt, dist = pair(T)
    if len(sel) == 0:
        return RegistrationResult(init, np.zeros(0, np.int64), 0, False)
    history = [float(dist.mean())]
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        try:
            T_new = estimate_rigid(pa[sel], pb[tgt])
        except DegenerateSampleError:
            break
        sel_new, tgt_new, dist_new = pair(T_new)
        if len(sel_new) == 0:
            break
        obj = float(dist_new.mean())
        if obj > history[-1]:
            converged = True
            break
        dt, dr = relative_errors(T_new, T)
        T, sel, tgt = T_new, sel_new, tgt_new
        history.append(obj)
        if dr < 1e-4 and dt < 1e-6:
            converged = True
            break
    return RegistrationResult(T, sel.astype(np.int64), it, converged, tuple(history))
