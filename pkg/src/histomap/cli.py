"""Command-line front end.

Subcommands: features (slide -> feature vector), select (cohort CSV ->
selection report), metrics (prediction vs ground truth), synth (fixture
generator), overestimate (rectangle-overshoot probability).

Exit codes: 0 success, 1 computation or data error, 2 usage error. Outputs
are canonical bytes; identical inputs and flags give identical output
bytes, whatever the worker count.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .distance import estimate_overestimation_probability
from .errors import HistomapError
from .features import FeatureRegistry
from .io import (
    CODE_TO_CLASS,
    canonical_json_bytes,
    format_number,
    parse_cells,
    parse_mask,
    parse_pgm,
    read_meta,
    write_feature_vector,
)
from .model import CellClass, SlideMeta
from .parallel import extract_features_parallel, resolve_workers
from .regions import align_slide
from .segmetrics import (
    InstanceLabelMap,
    aggregate_f1,
    aggregate_panoptic,
    classification_f1,
    panoptic_quality,
    semantic_iou,
)
from .selection import aggregate_scores, cv_sweep, read_cohort_csv
from .synth import generate, parse_config, write_fixture


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histomap",
        description="Tissue feature engine: slide features, feature selection, "
        "segmentation metrics, synthetic fixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="compute a slide's feature vector")
    p.add_argument("--cells", required=True, help="cell JSON file")
    p.add_argument("--mask", required=True, help="tumor mask file")
    p.add_argument("--mask-format", choices=("pgm", "rle"), default="pgm")
    p.add_argument("--meta", help="slide meta JSON (width/height/mpp/downsample)")
    p.add_argument("--mpp", type=float, help="microns per pixel (overrides meta)")
    p.add_argument("--downsample", type=int, help="mask downsample (overrides meta)")
    p.add_argument("--registry", help="feature registry JSON (default: built-in)")
    p.add_argument(
        "--vicinity-um",
        type=float,
        help="peritumoral band width in um (default: meta sidecar, then 1000)",
    )
    p.add_argument("--workers", type=int, help="process count (default: HM_WORKERS or cores)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_features, parser=p)

    p = sub.add_parser("select", help="cross-validated feature selection on a cohort")
    p.add_argument("--cohort", required=True, help="cohort CSV")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--method", choices=("mrmr", "mannwhitney"), default="mrmr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_select, parser=p)

    p = sub.add_parser("metrics", help="evaluate predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction file or directory")
    p.add_argument("--gt", required=True, help="ground-truth file or directory")
    p.add_argument("--mode", choices=("instances", "semantic"), required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--agg", choices=("per_image", "pooled"), default="per_image")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_metrics, parser=p)

    p = sub.add_parser("synth", help="generate a synthetic slide fixture")
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mask-format", choices=("pgm", "rle"), default="pgm")
    p.set_defaults(func=cmd_synth, parser=p)

    p = sub.add_parser(
        "overestimate", help="estimate the rectangle-search overshoot probability"
    )
    p.add_argument("n_cells", type=int)
    p.add_argument("trials", type=int)
    p.add_argument("seed", type=int, nargs="?", default=0)
    p.set_defaults(func=cmd_overestimate, parser=p)
    return parser


def _emit(data: bytes, out: Optional[str]) -> None:
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


# ---------------------------------------------------------------------------
# features


def cmd_features(args) -> int:
    meta_doc = None
    meta_path = args.meta
    if meta_path is None:
        candidate = Path(args.cells).parent / "meta.json"
        if candidate.is_file():
            meta_path = str(candidate)
    if meta_path is not None:
        meta_doc = read_meta(Path(meta_path).read_bytes())

    mpp = args.mpp if args.mpp is not None else (meta_doc.microns_per_pixel if meta_doc else None)
    downsample = (
        args.downsample
        if args.downsample is not None
        else (meta_doc.mask_downsample if meta_doc else None)
    )
    if mpp is None:
        args.parser.error("--mpp is required when no meta sidecar is given")
    if downsample is None:
        args.parser.error("--downsample is required when no meta sidecar is given")

    mask_bytes = Path(args.mask).read_bytes()
    if args.mask_format == "rle":
        if meta_doc is None:
            args.parser.error("RLE masks carry no dimensions; provide a meta sidecar")
        meta = SlideMeta(
            meta_doc.width_px, meta_doc.height_px, mpp, downsample, meta_doc.vicinity_um
        )
        mask = parse_mask(
            mask_bytes, "rle", width=meta.mask_width, height=meta.mask_height
        )
    else:
        mask = parse_mask(mask_bytes, "pgm")
        if meta_doc is not None:
            meta = SlideMeta(
                meta_doc.width_px, meta_doc.height_px, mpp, downsample, meta_doc.vicinity_um
            )
        else:
            meta = SlideMeta(mask.width * downsample, mask.height * downsample, mpp, downsample)

    cells = parse_cells(Path(args.cells).read_bytes())
    registry = (
        FeatureRegistry.from_json_bytes(Path(args.registry).read_bytes())
        if args.registry
        else FeatureRegistry.default()
    )
    slide = align_slide(meta, cells, mask, args.vicinity_um)
    fv = extract_features_parallel(slide, registry, workers=resolve_workers(args.workers))
    _emit(write_feature_vector(fv), args.out)
    return 0


# ---------------------------------------------------------------------------
# select


def cmd_select(args) -> int:
    if args.folds < 2:
        args.parser.error("--folds must be at least 2")
    cohort = read_cohort_csv(Path(args.cohort).read_bytes())
    result = cv_sweep(cohort, folds=args.folds, method=args.method, seed=args.seed)
    scores = aggregate_scores(
        [fs.ranking for fs in result.fold_selections],
        result.n_best,
        all_names=result.feature_names,
    )
    report = {
        "method": args.method,
        "folds": args.folds,
        "seed": args.seed,
        "n_best": result.n_best,
        "mean_balanced_accuracy": list(result.mean_curve),
        "fold_details": [
            {
                "fold": fs.fold,
                "ranking": list(fs.ranking),
                "balanced_accuracy_per_n": list(fs.accuracy_per_n),
                "auc_at_n_best": result.auc_at_best[fs.fold],
                "balanced_accuracy_at_n_best": result.ba_at_best[fs.fold],
            }
            for fs in result.fold_selections
        ],
        "feature_scores": [{"name": s.name, "c": s.c, "s": s.s} for s in scores],
    }
    _emit(canonical_json_bytes(report), args.out)
    return 0


# ---------------------------------------------------------------------------
# metrics


def _paired_files(args, suffix: str) -> list[tuple[Path, Path]]:
    pred, gt = Path(args.pred), Path(args.gt)
    if pred.is_file() and gt.is_file():
        return [(pred, gt)]
    if pred.is_dir() and gt.is_dir():
        pred_files = {p.name: p for p in sorted(pred.glob(f"*{suffix}"))}
        gt_files = {p.name: p for p in sorted(gt.glob(f"*{suffix}"))}
        if not pred_files or not gt_files:
            args.parser.error(f"no {suffix} files to evaluate")
        if set(pred_files) != set(gt_files):
            args.parser.error("prediction and ground-truth directories do not pair up")
        return [(pred_files[n], gt_files[n]) for n in sorted(pred_files)]
    args.parser.error("--pred and --gt must both be files or both directories")


def _load_instance_map(pgm_path: Path) -> InstanceLabelMap:
    import json

    from .errors import ParseError

    raster = parse_pgm(pgm_path.read_bytes()).astype("int64")
    sidecar = pgm_path.with_suffix(".json")
    if not sidecar.is_file():
        raise ParseError(f"missing class map {sidecar}")
    try:
        doc = json.loads(sidecar.read_text("utf-8"))
        classes = {int(k): CODE_TO_CLASS[int(v)] for k, v in doc.items()}
    except (ValueError, KeyError, AttributeError) as exc:
        raise ParseError(f"bad class map {sidecar}: {exc}") from exc
    return InstanceLabelMap(raster=raster, classes=classes)


def cmd_metrics(args) -> int:
    pairs = _paired_files(args, ".pgm")
    if args.mode == "instances":
        pq_results = []
        f1_results = []
        for pred_path, gt_path in pairs:
            pred = _load_instance_map(pred_path)
            gt = _load_instance_map(gt_path)
            pq_results.append(panoptic_quality(pred, gt, args.iou_threshold))
            f1_results.append(classification_f1(pred, gt, args.iou_threshold))
        pq = aggregate_panoptic(pq_results, args.agg)
        f1 = aggregate_f1(f1_results)
        report = {
            "mode": "instances",
            "images": len(pairs),
            "aggregation": args.agg,
            "iou_threshold": args.iou_threshold,
            "per_class": {
                cls.value: {
                    "pq": stats.pq,
                    "sq": stats.sq,
                    "rq": stats.rq,
                    "tp": stats.tp,
                    "fp": stats.fp,
                    "fn": stats.fn,
                }
                for cls, stats in pq.per_class.items()
            },
            "mpq": pq.mpq,
            "classification": {
                "per_class_f1": {cls.value: f1.per_class[cls] for cls in CellClass},
                "macro_f1": f1.macro_f1,
                "n_pairs": f1.n_pairs,
                "confusion": {
                    g.value: {p.value: f1.confusion[g][p] for p in CellClass}
                    for g in CellClass
                },
            },
        }
    else:
        per_image = []
        for pred_path, gt_path in pairs:
            pred = parse_pgm(pred_path.read_bytes()) != 0
            gt = parse_pgm(gt_path.read_bytes()) != 0
            per_image.append(semantic_iou(pred, gt))
        n = len(per_image)
        acc_vals = [r.acc_tissue for r in per_image if r.acc_tissue is not None]
        report = {
            "mode": "semantic",
            "images": n,
            "iou_tissue": sum(r.iou_tissue for r in per_image) / n,
            "miou": sum(r.miou for r in per_image) / n,
            "acc_tissue": sum(acc_vals) / len(acc_vals) if acc_vals else None,
            "macc": sum(r.macc for r in per_image) / n,
            "per_image": [
                {
                    "iou_tissue": r.iou_tissue,
                    "miou": r.miou,
                    "acc_tissue": r.acc_tissue,
                    "macc": r.macc,
                }
                for r in per_image
            ],
        }
    _emit(canonical_json_bytes(report), args.out)
    return 0


# ---------------------------------------------------------------------------
# synth / overestimate


def cmd_synth(args) -> int:
    config = parse_config(Path(args.config).read_bytes())
    result = generate(config)
    paths = write_fixture(result, args.out, mask_format=args.mask_format)
    _emit(canonical_json_bytes(paths) + b"\n", None)
    return 0


def cmd_overestimate(args) -> int:
    if args.n_cells < 1:
        args.parser.error("n_cells must be at least 1")
    if args.trials < 1:
        args.parser.error("trials must be at least 1")
    p = estimate_overestimation_probability(args.n_cells, args.trials, args.seed)
    sys.stdout.write(format_number(float(p)) + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HistomapError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
