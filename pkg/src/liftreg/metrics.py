"""Registration metrics: IR, FMR, RMSE, RR, RTE and RRE.

Thresholds compare strictly, exactly as the definitions are written:
a correspondence is an inlier when its residual is ``< tau1``, a pair counts
toward FMR when its inlier ratio is ``> tau2`` and toward RR when its RMSE
is ``< tau3``. Values equal to a threshold count as failures.

RTE is the Euclidean (L2) norm of the translation difference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetIOError, FormatError, InsufficientInputError
from .geometry import CorrespondenceSet, PointCloud, RigidTransform

__all__ = [
    "MetricThresholds",
    "PairEvaluation",
    "BenchmarkReport",
    "inlier_ratio",
    "feature_matching_recall",
    "rmse",
    "registration_recall",
    "relative_errors",
    "write_records",
    "read_records",
    "format_table",
]


@dataclass(frozen=True)
class MetricThresholds:
    tau1: float = 0.10  # inlier residual, meters
    tau2: float = 0.05  # minimum inlier ratio for FMR
    tau3: float = 0.20  # RMSE cutoff for RR, meters

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0 and self.tau3 > 0):
            raise ValueError("metric thresholds must be positive")


def _residuals(corrs: CorrespondenceSet, cloud_a: PointCloud, cloud_b: PointCloud, T: RigidTransform) -> np.ndarray:
    a = T.apply(cloud_a.positions[corrs.source])
    b = cloud_b.positions[corrs.target]
    return np.linalg.norm(a - b, axis=1)


def inlier_ratio(
    corrs: CorrespondenceSet, cloud_a: PointCloud, cloud_b: PointCloud, gt: RigidTransform, tau1: float = 0.10
) -> float:
    """Fraction of correspondences whose residual under ``gt`` is below ``tau1``.

    An empty correspondence set has inlier ratio 0.
    """
    if not tau1 > 0:
        raise ValueError("tau1 must be positive")
    if len(corrs) == 0:
        return 0.0
    return float(np.count_nonzero(_residuals(corrs, cloud_a, cloud_b, gt) < tau1)) / len(corrs)


def feature_matching_recall(pair_irs: Sequence[float], tau2: float = 0.05) -> float:
    if not 0 < tau2 < 1:
        raise ValueError("tau2 must lie in (0, 1)")
    if len(pair_irs) == 0:
        return 0.0
    return sum(1 for ir in pair_irs if ir > tau2) / len(pair_irs)


def rmse(gt_corrs: CorrespondenceSet, cloud_a: PointCloud, cloud_b: PointCloud, estimated: RigidTransform) -> float:
    """Root mean square residual of ground-truth correspondences under ``estimated``."""
    if len(gt_corrs) == 0:
        raise InsufficientInputError("RMSE is undefined without ground-truth correspondences")
    r = _residuals(gt_corrs, cloud_a, cloud_b, estimated)
    return float(np.sqrt(np.mean(r * r)))


def registration_recall(pair_rmses: Sequence[float], tau3: float = 0.20) -> float:
    if not tau3 > 0:
        raise ValueError("tau3 must be positive")
    if len(pair_rmses) == 0:
        return 0.0
    return sum(1 for e in pair_rmses if e < tau3) / len(pair_rmses)


def relative_errors(estimated: RigidTransform, gt: RigidTransform) -> tuple[float, float]:
    """``(rte_meters, rre_degrees)`` between an estimate and the ground truth."""
    rte = float(np.linalg.norm(estimated.translation - gt.translation))
    M = estimated.rotation.T @ gt.rotation
    # same angle as acos((trace - 1) / 2) but without its round-off floor near 0
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * math.hypot(M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1])
    rre = math.degrees(math.atan2(s, c))
    return rte, rre


@dataclass(frozen=True)
class PairEvaluation:
    pair_id: str
    inlier_ratio: float
    rmse: float
    rte: float
    rre: float
    estimated: RigidTransform = field(repr=False, compare=False, default=None)
    ground_truth: RigidTransform = field(repr=False, compare=False, default=None)
    converged: bool = False
    samples: int | None = None
    n_correspondences: int = 0
    coverage: float | None = None
    mode: str | None = None
    error: str | None = None

    @classmethod
    def evaluate(
        cls,
        pair_id: str,
        corrs: CorrespondenceSet,
        cloud_a: PointCloud,
        cloud_b: PointCloud,
        estimated: RigidTransform,
        ground_truth: RigidTransform,
        gt_corrs: CorrespondenceSet,
        thresholds: MetricThresholds = MetricThresholds(),
        **extra,
    ) -> PairEvaluation:
        rte, rre = relative_errors(estimated, ground_truth)
        return cls(
            pair_id=pair_id,
            inlier_ratio=inlier_ratio(corrs, cloud_a, cloud_b, ground_truth, thresholds.tau1),
            rmse=rmse(gt_corrs, cloud_a, cloud_b, estimated),
            rte=rte,
            rre=rre,
            estimated=estimated,
            ground_truth=ground_truth,
            n_correspondences=len(corrs),
            **extra,
        )

    def to_record(self) -> dict:
        """JSON-ready dict; non-finite numbers become ``None``."""
        return {
            "pair_id": self.pair_id,
            "samples": self.samples,
            "mode": self.mode,
            "ir": _finite(self.inlier_ratio),
            "rmse": _finite(self.rmse),
            "rte": _finite(self.rte),
            "rre": _finite(self.rre),
            "converged": self.converged,
            "n_corr": self.n_correspondences,
            "coverage": _finite(self.coverage),
            "error": self.error,
        }


def _finite(x: float | None) -> float | None:
    return x if x is not None and math.isfinite(x) else None


@dataclass
class BenchmarkReport:
    """Per-pair evaluations plus the dataset-level aggregates.

    ``mean_rre`` and ``mean_rte`` average over successfully registered pairs
    (RMSE below ``tau3``); they are NaN when no pair registered.
    """

    pairs: list[PairEvaluation]
    thresholds: MetricThresholds = field(default_factory=MetricThresholds)

    @property
    def fmr(self) -> float:
        return feature_matching_recall([p.inlier_ratio for p in self.pairs], self.thresholds.tau2)

    @property
    def rr(self) -> float:
        return registration_recall([p.rmse for p in self.pairs], self.thresholds.tau3)

    def _registered(self) -> list[PairEvaluation]:
        return [p for p in self.pairs if p.rmse < self.thresholds.tau3]

    @property
    def mean_rre(self) -> float:
        ok = self._registered()
        return float(np.mean([p.rre for p in ok])) if ok else float("nan")

    @property
    def mean_rte(self) -> float:
        ok = self._registered()
        return float(np.mean([p.rte for p in ok])) if ok else float("nan")

    @property
    def mean_inlier_ratio(self) -> float:
        return float(np.mean([p.inlier_ratio for p in self.pairs])) if self.pairs else float("nan")

    @property
    def mean_coverage(self) -> float:
        vals = [p.coverage for p in self.pairs if p.coverage is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def failures(self) -> list[str]:
        return [p.pair_id for p in self.pairs if p.error]


def write_records(path: str | Path, evaluations: Iterable[PairEvaluation]) -> None:
    """One JSON object per line, keys in a fixed order."""
    lines = [json.dumps(e.to_record()) for e in evaluations]
    try:
        Path(path).write_text("".join(line + "\n" for line in lines))
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_records(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc.strerror or exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad record: {exc.msg}", str(path), lineno) from exc
    return out


def _pct(x: float) -> str:
    return "   n/a" if math.isnan(x) else f"{100 * x:6.1f}"


def _num(x: float, fmt: str) -> str:
    return "   n/a" if math.isnan(x) else format(x, fmt)


def format_table(reports: dict[int, BenchmarkReport], title: str = "", header: Sequence[str] = ()) -> str:
    """Text table with one column per sample count and one row per metric."""
    counts = list(reports)
    lines = [f"# {h}" for h in header]
    if title:
        lines.append(title)
    lines.append(f"{'# Sampled correspondences':<28}" + "".join(f"{c:>9}" for c in counts))
    rows = [
        ("Feature Matching Recall (%)", lambda r: _pct(r.fmr)),
        ("Registration Recall (%)", lambda r: _pct(r.rr)),
        ("Mean Inlier Ratio (%)", lambda r: _pct(r.mean_inlier_ratio)),
        ("RRE (deg)", lambda r: _num(r.mean_rre, "6.3f")),
        ("RTE (m)", lambda r: _num(r.mean_rte, "6.3f")),
    ]
    for name, fn in rows:
        lines.append(f"{name:<28}" + "".join(f"{fn(reports[c]):>9}" for c in counts))
    return "\n".join(lines) + "\n"
