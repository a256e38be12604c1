"""End-to-end registration of scene pairs: lift, match, RANSAC, evaluate.

The 2D matcher that defines explicit-lifting regions always uses PATCH
descriptors; the provider in :class:`LiftConfig` only chooses what gets
lifted onto the points.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import DatasetManifest, ScenePair, load_pair
from .errors import InsufficientInputError, LiftRegError, ValidationError
from .features import Correspondence2D, FeatureProvider, FeatureProviderKind, load_correspondences, match_images
from .geometry import CorrespondenceSet, PointCloud, RigidTransform, nearest_neighbor
from .lift import AugmentedCloud, LiftConfig, LiftMode, geometry_only, lift_explicit, lift_implicit
from .metrics import BenchmarkReport, MetricThresholds, PairEvaluation, inlier_ratio
from .registration import RansacConfig, RegistrationResult, icp_refine, match_features, ransac_register

__all__ = [
    "DEFAULT_SAMPLES",
    "PipelineConfig",
    "PairOutcome",
    "image_matches",
    "augment_pair",
    "register_pair",
    "evaluate_pair",
    "evaluate_pairs",
    "evaluate_manifest",
    "gt_correspondences",
]

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = (5000, 2500, 1000, 500, 250)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one registration run over one or many pairs.

    ``corr_dir`` replaces the built-in 2D matcher with files
    ``<corr_dir>/<pair_id>/<i>-<j>.txt`` (source view ``i``, target view ``j``).
    ``feature_dir`` points the loader at precomputed dense feature maps.
    """

    lift: LiftConfig = field(default_factory=LiftConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)
    samples: tuple[int, ...] = DEFAULT_SAMPLES
    geometry_only: bool = False
    keypoint_stride: int = 4
    ratio: float = 0.8
    min_confidence: float = 0.0
    max_matches: int | None = None
    mutual: bool = True
    icp: bool = False
    gt_radius: float = 0.0375
    seed: int = 0
    corr_dir: Path | None = None
    feature_dir: Path | None = None
    voxel: float = 0.025
    max_overlap: float | None = None

    def __post_init__(self):
        s = tuple(int(x) for x in self.samples)
        if not s or min(s) < 1:
            raise ValueError("sample counts must be positive")
        object.__setattr__(self, "samples", s)
        if not self.gt_radius > 0:
            raise ValueError("gt_radius must be positive")

    @property
    def label(self) -> str:
        if self.geometry_only:
            return "geometry"
        return f"{self.lift.mode.value}-{self.lift.provider.kind.value}"


@dataclass(frozen=True, eq=False)
class PairOutcome:
    """Everything computed for one pair; ``evaluations`` has one entry per sample count."""

    pair_id: str
    evaluations: list[PairEvaluation]
    source: AugmentedCloud | None = None
    target: AugmentedCloud | None = None
    matches_2d: int = 0


def gt_correspondences(pair: ScenePair, radius: float = 0.0375) -> CorrespondenceSet:
    """Source/target point pairs closer than ``radius`` under the ground truth."""
    moved = PointCloud(pair.ground_truth.apply(pair.source.cloud.positions))
    return nearest_neighbor(moved, PointCloud(pair.target.cloud.positions), radius)


def image_matches(
    pair: ScenePair, config: PipelineConfig
) -> tuple[list[list[Correspondence2D]], list[list[Correspondence2D]], int]:
    """2D matches between every source view and every target view.

    Returns per-view lists for the source side and the target side: each
    view collects the matches it takes part in. The third value is the
    total number of matches.
    """
    src_views, tgt_views = pair.source.views, pair.target.views
    per_src: list[list[Correspondence2D]] = [[] for _ in src_views]
    per_tgt: list[list[Correspondence2D]] = [[] for _ in tgt_views]
    matcher = FeatureProvider(FeatureProviderKind.PATCH)
    total = 0
    if config.corr_dir is not None:
        pair_dir = Path(config.corr_dir) / pair.pair_id
        if not pair_dir.is_dir():
            raise ValidationError(f"no correspondence directory {pair_dir} for pair {pair.pair_id!r}")
    for i, va in enumerate(src_views):
        for j, vb in enumerate(tgt_views):
            if config.corr_dir is not None:
                path = Path(config.corr_dir) / pair.pair_id / f"{i}-{j}.txt"
                if not path.is_file():
                    continue
                size_a = (va.intrinsics.width, va.intrinsics.height)
                size_b = (vb.intrinsics.width, vb.intrinsics.height)
                m = [c for c in load_correspondences(path, size_a, size_b) if c.confidence >= config.min_confidence]
            else:
                m = match_images(
                    va, vb, matcher, config.keypoint_stride, config.ratio, config.min_confidence, config.max_matches
                )
            per_src[i].extend(m)
            per_tgt[j].extend(m)
            total += len(m)
    return per_src, per_tgt, total


def augment_pair(pair: ScenePair, config: PipelineConfig) -> tuple[AugmentedCloud, AugmentedCloud, int]:
    """Attach features to both clouds according to the configuration."""
    if config.geometry_only:
        return geometry_only(pair.source.cloud), geometry_only(pair.target.cloud), 0
    lc = config.lift
    if lc.mode is LiftMode.IMPLICIT:
        return lift_implicit(pair.source.cloud, pair.source.views, lc), lift_implicit(pair.target.cloud, pair.target.views, lc), 0
    per_src, per_tgt, total = image_matches(pair, config)
    a = lift_explicit(pair.source.cloud, pair.source.views, per_src, lc, "source")
    b = lift_explicit(pair.target.cloud, pair.target.views, per_tgt, lc, "target")
    return a, b, total


def _seed(base: int, *parts: int) -> int:
    return int(np.random.SeedSequence([int(base) & (2**64 - 1), *parts]).generate_state(1, np.uint64)[0] >> 1)


def register_pair(
    a: AugmentedCloud, b: AugmentedCloud, corrs: CorrespondenceSet, config: PipelineConfig, seed: int
) -> RegistrationResult:
    result = ransac_register(a, b, corrs, replace(config.ransac, seed=seed))
    if config.icp and result.converged:
        refined = icp_refine(a, b, result.transform)
        result = replace(refined, inlier_indices=result.inlier_indices, iterations_run=result.iterations_run)
    return result


def _failed(pair_id: str, count: int, mode: str, gt: RigidTransform, message: str, ir=0.0, n=0, coverage=None):
    return PairEvaluation(
        pair_id, ir, math.inf, math.nan, math.nan, None, gt, False, count, n, coverage, mode, message
    )


def evaluate_pair(pair: ScenePair, config: PipelineConfig, pair_index: int = 0) -> PairOutcome:
    """Register one pair at every sample count and score the results.

    Errors inside the pipeline become failed evaluations carrying the
    message; they never abort a benchmark run.
    """
    mode = config.label
    gt = pair.ground_truth
    try:
        gt_corrs = gt_correspondences(pair, config.gt_radius)
        a, b, n2d = augment_pair(pair, config)
    except LiftRegError as exc:
        log.warning("pair %s failed: %s", pair.pair_id, exc)
        return PairOutcome(pair.pair_id, [_failed(pair.pair_id, c, mode, gt, str(exc)) for c in config.samples])
    coverage = 0.5 * (a.mask.covered_fraction + b.mask.covered_fraction)
    # the geometry-only baseline has no coverage mask to respect
    all_corrs = match_features(
        a, b, mutual=config.mutual, top_k=max(config.samples), covered_only=not config.geometry_only
    )
    evals = []
    for count in config.samples:
        corrs = all_corrs[:count]
        ir = inlier_ratio(corrs, a.cloud, b.cloud, gt, config.thresholds.tau1)
        if len(gt_corrs) == 0:
            evals.append(_failed(pair.pair_id, count, mode, gt, "no ground-truth correspondences", ir, len(corrs), coverage))
            continue
        try:
            result = register_pair(a, b, corrs, config, _seed(config.seed, pair_index, count))
        except InsufficientInputError as exc:
            evals.append(_failed(pair.pair_id, count, mode, gt, str(exc), ir, len(corrs), coverage))
            continue
        evals.append(
            PairEvaluation.evaluate(
                pair.pair_id,
                corrs,
                a.cloud,
                b.cloud,
                result.transform,
                gt,
                gt_corrs,
                config.thresholds,
                converged=result.converged,
                samples=count,
                coverage=coverage,
                mode=mode,
            )
        )
    log.info("pair %s: %d 2D matches, coverage %.3f, %d 3D matches", pair.pair_id, n2d, coverage, len(all_corrs))
    return PairOutcome(pair.pair_id, evals, a, b, n2d)


def _reports(outcomes: Sequence[PairOutcome], config: PipelineConfig) -> dict[int, BenchmarkReport]:
    reports = {}
    for k, count in enumerate(config.samples):
        reports[count] = BenchmarkReport([o.evaluations[k] for o in outcomes], config.thresholds)
    return reports


def evaluate_pairs(pairs: Sequence[ScenePair], config: PipelineConfig) -> dict[int, BenchmarkReport]:
    """In-memory evaluation; reports keyed by sample count."""
    return _reports([evaluate_pair(p, config, i) for i, p in enumerate(pairs)], config)


def _manifest_job(args) -> PairOutcome:
    manifest, pair_id, index, config = args
    return _run_manifest_pair(manifest, pair_id, index, config)


def _run_manifest_pair(manifest: DatasetManifest, pair_id: str, index: int, config: PipelineConfig) -> PairOutcome:
    try:
        pair = load_pair(manifest, pair_id, config.lift.views_per_cloud, config.voxel, config.feature_dir)
    except LiftRegError as exc:
        log.warning("cannot load pair %s: %s", pair_id, exc)
        return PairOutcome(
            pair_id,
            [_failed(pair_id, c, config.label, None, f"load failed: {exc}") for c in config.samples],
        )
    out = evaluate_pair(pair, config, index)
    # drop the clouds so results stay cheap to send between processes
    return PairOutcome(out.pair_id, out.evaluations, None, None, out.matches_2d)


def evaluate_manifest(
    manifest: DatasetManifest,
    config: PipelineConfig,
    jobs: int = 1,
    on_pair: Callable[[PairOutcome], None] | None = None,
) -> dict[int, BenchmarkReport]:
    """Evaluate every pair of a manifest, optionally in ``jobs`` processes.

    Pair ``i`` always uses the same RANSAC seeds, so results do not depend on
    ``jobs``. With ``config.max_overlap`` set, pairs whose recorded overlap
    exceeds it are skipped.
    """
    selected = [
        (i, p.pair_id)
        for i, p in enumerate(manifest.pairs)
        if config.max_overlap is None or p.overlap is None or p.overlap <= config.max_overlap
    ]
    if jobs > 1 and len(selected) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_manifest_job, [(manifest, pid, i, config) for i, pid in selected]))
        if on_pair is not None:
            for o in outcomes:
                on_pair(o)
    else:
        outcomes = []
        for i, pid in selected:
            o = _run_manifest_pair(manifest, pid, i, config)
            if on_pair is not None:
                on_pair(o)
            outcomes.append(o)
    return _reports(outcomes, config)
