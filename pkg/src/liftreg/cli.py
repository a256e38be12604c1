"""Command-line interface: ``liftreg generate | register | evaluate | ablate``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Set ``PCR_LOG``
to a logging level name (DEBUG, INFO, WARNING) for more or less output.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import export_ply, load_pair, read_manifest, write_pose
from .errors import ConfigurationError, LiftRegError
from .features import FeatureProvider, FeatureProviderKind
from .geometry import overlap_fraction
from .lift import LiftConfig, LiftMode
from .metrics import BenchmarkReport, MetricThresholds, format_table, relative_errors, write_records
from .pipeline import DEFAULT_SAMPLES, PipelineConfig, augment_pair, evaluate_manifest, register_pair
from .registration import RansacConfig, match_features

log = logging.getLogger("liftreg")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

ABLATION_AXES = {
    "window": [3, 7, 11, 17],
    "views": [1, 2, 3],
    "mode": ["implicit", "explicit"],
    "provider": ["rgb", "patch", "precomputed"],
}


class UsageError(Exception):
    pass


def _samples(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("sample counts must be positive")
    return vals


def _add_pipeline_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("lifting")
    g.add_argument("--mode", choices=[m.value for m in LiftMode], default="explicit")
    g.add_argument("--window", type=int, default=11, help="region side in pixels (odd)")
    g.add_argument("--views", type=int, default=2, help="views per point cloud")
    g.add_argument("--provider", choices=[k.value for k in FeatureProviderKind], default="patch")
    g.add_argument("--patch-window", type=int, default=15)
    g.add_argument("--geometry-only", action="store_true", help="skip lifting (all-ones features)")
    g.add_argument("--corr-file", type=Path, help="directory of 2D matches: <dir>/<pair>/<i>-<j>.txt")
    g.add_argument("--feature-map", type=Path, help="directory of precomputed feature maps")
    g.add_argument("--keypoint-stride", type=int, default=4)
    g.add_argument("--ratio", type=float, default=0.8)
    g.add_argument("--min-confidence", type=float, default=0.0)
    g.add_argument("--max-matches", type=int)
    g.add_argument("--voxel", type=float, default=0.025)
    g = p.add_argument_group("registration")
    g.add_argument("--samples", type=_samples, default=DEFAULT_SAMPLES, help="comma-separated correspondence counts")
    g.add_argument("--iterations", type=int, default=50_000)
    g.add_argument("--inlier-threshold", type=float, default=0.05)
    g.add_argument("--icp", action="store_true", help="refine with point-to-point ICP")
    g.add_argument("--seed", type=int, default=0)
    g = p.add_argument_group("metrics")
    g.add_argument("--tau1", type=float, default=0.10)
    g.add_argument("--tau2", type=float, default=0.05)
    g.add_argument("--tau3", type=float, default=0.20)
    g.add_argument("--gt-radius", type=float, default=0.0375)


def _config(args) -> PipelineConfig:
    try:
        provider = FeatureProvider(args.provider, patch_window=args.patch_window)
        lift = LiftConfig(args.mode, args.window, args.views, provider=provider)
        ransac = RansacConfig(args.iterations, args.inlier_threshold, seed=args.seed)
        thresholds = MetricThresholds(args.tau1, args.tau2, args.tau3)
        return PipelineConfig(
            lift=lift,
            ransac=ransac,
            thresholds=thresholds,
            samples=args.samples,
            geometry_only=args.geometry_only,
            keypoint_stride=args.keypoint_stride,
            ratio=args.ratio,
            min_confidence=args.min_confidence,
            max_matches=args.max_matches,
            icp=args.icp,
            gt_radius=args.gt_radius,
            seed=args.seed,
            corr_dir=args.corr_file,
            feature_dir=args.feature_map,
            voxel=args.voxel,
            max_overlap=getattr(args, "max_overlap", None),
        )
    except (ConfigurationError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _header(config: PipelineConfig, extra: Sequence[str] = ()) -> list[str]:
    lc, rc, th = config.lift, config.ransac, config.thresholds
    lines = [
        f"liftreg {__version__}",
        f"features: {config.label} window={lc.window} views={lc.views_per_cloud} depth_tolerance={lc.depth_tolerance}",
        f"2D matcher: patch keypoint_stride={config.keypoint_stride} ratio={config.ratio} "
        f"min_confidence={config.min_confidence} max_matches={config.max_matches}",
        f"ransac: iterations={rc.iterations} inlier_threshold={rc.inlier_threshold} seed={config.seed} icp={config.icp}",
        f"thresholds: tau1={th.tau1} tau2={th.tau2} tau3={th.tau3} gt_radius={config.gt_radius}",
    ]
    return lines + list(extra)


def _claim(paths: Sequence[Path], force: bool) -> None:
    """Refuse to overwrite existing reports unless forced."""
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise LiftRegError(f"refusing to overwrite {', '.join(map(str, existing))} (use --force)")
    for p in paths:
        p.parent.mkdir(parents=True, exist_ok=True)


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    from .synth import SceneSpec, generate_benchmark

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise LiftRegError(f"refusing to write into non-empty {out} (use --force)")
    try:
        spec = SceneSpec(
            seed=args.seed,
            height=args.height,
            width=args.width,
            frames_per_side=args.frames,
            overlap=args.overlap,
            overlap_tolerance=args.overlap_tolerance,
            depth_noise=args.noise,
            outlier_rate=args.outlier_rate,
            feature_dim=args.feature_dim,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")

    def report(sp):
        print(f"{sp.pair.pair_id}  overlap {sp.overlap:.3f}  points {len(sp.pair.source.cloud)}/{len(sp.pair.target.cloud)}")

    generate_benchmark(args.pairs, spec, out, progress=report)
    print(f"wrote {args.pairs} pairs to {out}")
    return EXIT_OK


def cmd_register(args) -> int:
    config = _config(args)
    manifest = read_manifest(args.dataset)
    pair = load_pair(manifest, args.pair, config.lift.views_per_cloud, config.voxel, config.feature_dir)
    a, b, n2d = augment_pair(pair, config)
    corrs = match_features(a, b, mutual=config.mutual, top_k=config.samples[0], covered_only=not config.geometry_only)
    result = register_pair(a, b, corrs, config, config.seed)
    out = Path(args.out)
    pose_path = out / f"{pair.pair_id}.pose.txt"
    targets = [pose_path] + ([out / f"{pair.pair_id}.aligned.ply"] if args.ply else [])
    _claim(targets, args.force)
    write_pose(pose_path, result.transform)
    if args.ply:
        export_ply(pair.source.cloud, targets[1], apply=result.transform, binary=True)
    rte, rre = relative_errors(result.transform, pair.ground_truth)
    overlap = overlap_fraction(pair.source.cloud, pair.target.cloud, result.transform)
    print(
        f"{pair.pair_id} mode={config.label} matches2d={n2d} corr={len(corrs)} inliers={len(result.inlier_indices)} "
        f"converged={result.converged} RTE={rte:.4f} m RRE={rre:.3f} deg overlap={overlap:.3f}"
    )
    print(f"pose written to {pose_path}")
    return EXIT_OK


def _write_report(out: Path, config: PipelineConfig, reports: dict[int, BenchmarkReport], force: bool, extra=()) -> str:
    table_path, rec_path = out / "report.txt", out / "records.jsonl"
    _claim([table_path, rec_path], force)
    first = next(iter(reports.values()))
    failures = first.failures
    extra = list(extra) + [f"pairs: {len(first.pairs)}  failed: {len(failures)}"]
    table = format_table(reports, title=f"Benchmark ({config.label})", header=_header(config, extra))
    if failures:
        table += "failed pairs: " + ", ".join(failures) + "\n"
    table_path.write_text(table)
    write_records(rec_path, [e for r in reports.values() for e in r.pairs])
    return table


def cmd_evaluate(args) -> int:
    config = _config(args)
    manifest = read_manifest(args.dataset)
    reports = evaluate_manifest(manifest, config, jobs=args.jobs, on_pair=_progress)
    table = _write_report(Path(args.out), config, reports, args.force, [f"dataset: {manifest.root}"])
    print(table, end="")
    return EXIT_OK


def _progress(outcome) -> None:
    e = outcome.evaluations[0]
    status = "error: " + e.error if e.error else f"rmse {e.rmse:.4f}"
    log.info("%s %s", outcome.pair_id, status)


def _ablation_config(config: PipelineConfig, axis: str, value) -> PipelineConfig:
    lc = config.lift
    if axis == "window":
        return replace(config, lift=replace(lc, window=value))
    if axis == "views":
        return replace(config, lift=replace(lc, views_per_cloud=value))
    if axis == "mode":
        return replace(config, lift=replace(lc, mode=LiftMode(value)))
    return replace(config, lift=replace(lc, provider=replace(lc.provider, kind=FeatureProviderKind(value))))


def cmd_ablate(args) -> int:
    if args.axis not in ABLATION_AXES:
        raise UsageError(f"unknown axis {args.axis!r}; choose from {', '.join(ABLATION_AXES)}")
    base = _config(args)
    manifest = read_manifest(args.dataset)
    out = Path(args.out)
    values = ABLATION_AXES[args.axis]
    comparison = out / "comparison.txt"
    _claim([comparison] + [out / f"{args.axis}-{v}" / "report.txt" for v in values], args.force)
    rows = []
    for value in values:
        try:
            config = _ablation_config(base, args.axis, value)
        except (ConfigurationError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
        reports = evaluate_manifest(manifest, config, jobs=args.jobs)
        _write_report(out / f"{args.axis}-{value}", config, reports, True, [f"ablation: {args.axis}={value}"])
        rows.append((value, reports))
    counts = base.samples
    lines = [f"# {h}" for h in _header(base, [f"ablation axis: {args.axis}"])]
    lines.append(
        f"{args.axis:<12}{'coverage':>10}"
        + "".join(f"{'FMR@' + str(c):>11}" for c in counts)
        + "".join(f"{'RR@' + str(c):>11}" for c in counts)
    )
    for value, reports in rows:
        first = reports[counts[0]]
        cov = first.mean_coverage
        line = f"{str(value):<12}{'n/a' if cov != cov else f'{100 * cov:.1f}':>10}"
        line += "".join(f"{100 * reports[c].fmr:>11.1f}" for c in counts)
        line += "".join(f"{100 * reports[c].rr:>11.1f}" for c in counts)
        lines.append(line)
    text = "\n".join(lines) + "\n"
    comparison.write_text(text)
    print(text, end="")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liftreg", description="Point-cloud registration with lifted 2D features.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark")
    p.add_argument("--pairs", type=int, default=5)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--overlap-tolerance", type=float, default=0.1)
    p.add_argument("--noise", type=float, default=0.0, help="depth noise sigma, meters")
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--frames", type=int, default=8, help="frames per fragment")
    p.add_argument("--feature-dim", type=int, default=0, help="also write dense feature maps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("register", help="register one pair")
    p.add_argument("dataset", type=Path, help="dataset directory or manifest file")
    p.add_argument("--pair", required=True)
    p.add_argument("--ply", action="store_true", help="also write the aligned source cloud")
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--force", action="store_true")
    _add_pipeline_args(p)
    p.set_defaults(func=cmd_register)

    for name, func, help_ in (("evaluate", cmd_evaluate, "benchmark every pair"), ("ablate", cmd_ablate, "sweep one setting")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("dataset", type=Path, help="dataset directory or manifest file")
        if name == "ablate":
            p.add_argument("--axis", required=True, help="window, views, mode or provider")
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--force", action="store_true")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--max-overlap", type=float, help="skip pairs whose recorded overlap is higher")
        _add_pipeline_args(p)
        p.set_defaults(func=func)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("PCR_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except LiftRegError as exc:
        print(f"liftreg: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"liftreg: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
