"""Segmentation quality metrics: instance matching, panoptic quality,
paired-cell classification F1, and binary semantic IoU/accuracy.

Instance matching follows the standard panoptic-quality rule: a predicted
and a ground-truth instance match when their IoU strictly exceeds the
threshold. At thresholds of at least 0.5 the matching is unique (a pixel
majority can only be shared one way); the greedy implementation also
handles lower thresholds deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MetricError
from .model import CellClass

PQ_IOU_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class InstanceLabelMap:
    """Instance-id raster (0 = background) with a class per instance id."""

    raster: np.ndarray
    classes: dict  # instance id -> CellClass

    def __post_init__(self):
        raster = np.asarray(self.raster)
        if raster.ndim != 2 or not np.issubdtype(raster.dtype, np.integer):
            raise MetricError("instance raster must be a 2-D integer array")
        if raster.size and raster.min() < 0:
            raise MetricError("instance ids must be non-negative")
        object.__setattr__(self, "raster", raster)
        present = _present_ids(raster)
        missing = [i for i in present if i not in self.classes]
        if missing:
            raise MetricError(f"instances without a class: {missing}")
        if any(not isinstance(c, CellClass) for c in self.classes.values()):
            raise MetricError("class map values must be CellClass members")


def _present_ids(raster: np.ndarray) -> list[int]:
    ids = np.unique(raster)
    return [int(i) for i in ids if i != 0]


@dataclass(frozen=True)
class MatchResult:
    """tp: (gt id, pred id, IoU) sorted by gt id; fp/fn: unmatched ids."""

    tp: tuple
    fp: tuple
    fn: tuple


def _pair_ious(pred: np.ndarray, gt: np.ndarray) -> dict[tuple[int, int], float]:
    overlap = (pred != 0) & (gt != 0)
    if not overlap.any():
        return {}
    p = pred[overlap].astype(np.int64)
    g = gt[overlap].astype(np.int64)
    stride = int(pred.max()) + 1
    codes, counts = np.unique(g * stride + p, return_counts=True)
    pred_areas = np.bincount(pred.ravel().astype(np.int64))
    gt_areas = np.bincount(gt.ravel().astype(np.int64))
    ious = {}
    for code, inter in zip(codes, counts):
        gid, pid = int(code // stride), int(code % stride)
        union = int(gt_areas[gid]) + int(pred_areas[pid]) - int(inter)
        ious[(gid, pid)] = float(inter) / float(union)
    return ious


def match_instances(
    pred: InstanceLabelMap, gt: InstanceLabelMap, iou_threshold: float = PQ_IOU_THRESHOLD
) -> MatchResult:
    """Pair instances with IoU strictly above the threshold.

    Pairs are taken greedily by descending IoU with (gt id, pred id) as the
    tie-break; at thresholds >= 0.5 this reproduces the unique matching.
    """
    if pred.raster.shape != gt.raster.shape:
        raise MetricError(
            f"raster shapes differ: {pred.raster.shape} vs {gt.raster.shape}"
        )
    candidates = [
        (iou, gid, pid)
        for (gid, pid), iou in _pair_ious(pred.raster, gt.raster).items()
        if iou > iou_threshold
    ]
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_g: set[int] = set()
    used_p: set[int] = set()
    tp = []
    for iou, gid, pid in candidates:
        if gid in used_g or pid in used_p:
            continue
        used_g.add(gid)
        used_p.add(pid)
        tp.append((gid, pid, iou))
    tp.sort(key=lambda t: t[0])
    fp = tuple(i for i in _present_ids(pred.raster) if i not in used_p)
    fn = tuple(i for i in _present_ids(gt.raster) if i not in used_g)
    return MatchResult(tp=tuple(tp), fp=fp, fn=fn)


# ---------------------------------------------------------------------------
# panoptic quality


@dataclass(frozen=True)
class ClassPQ:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    sum_iou: float


@dataclass(frozen=True)
class PQResult:
    per_class: dict  # CellClass -> ClassPQ, classes present in either map
    mpq: Optional[float]


def _class_submap(m: InstanceLabelMap, cls: CellClass) -> InstanceLabelMap:
    keep = {i for i, c in m.classes.items() if c is cls}
    if not keep:
        return InstanceLabelMap(np.zeros_like(m.raster), {})
    mask = np.isin(m.raster, sorted(keep))
    return InstanceLabelMap(
        np.where(mask, m.raster, 0), {i: cls for i in keep}
    )


def _pq_from_match(match: MatchResult) -> ClassPQ:
    tp = len(match.tp)
    fp = len(match.fp)
    fn = len(match.fn)
    sum_iou = 0.0
    for _, _, iou in match.tp:
        sum_iou += iou
    denom = tp + 0.5 * fp + 0.5 * fn
    sq = sum_iou / tp if tp else 0.0
    rq = tp / denom if denom else 0.0
    pq = sum_iou / denom if denom else 0.0
    return ClassPQ(pq=pq, sq=sq, rq=rq, tp=tp, fp=fp, fn=fn, sum_iou=sum_iou)


def panoptic_quality(
    pred: InstanceLabelMap, gt: InstanceLabelMap, iou_threshold: float = PQ_IOU_THRESHOLD
) -> PQResult:
    """Per-class PQ over classes present in either map, and their mean.

    A class with no instance on either side contributes nothing. The
    identity PQ = SQ * RQ holds for every reported class.
    """
    if pred.raster.shape != gt.raster.shape:
        raise MetricError(
            f"raster shapes differ: {pred.raster.shape} vs {gt.raster.shape}"
        )
    pred_present = {pred.classes[i] for i in _present_ids(pred.raster)}
    gt_present = {gt.classes[i] for i in _present_ids(gt.raster)}
    per_class = {}
    for cls in CellClass:
        if cls not in pred_present and cls not in gt_present:
            continue
        match = match_instances(_class_submap(pred, cls), _class_submap(gt, cls), iou_threshold)
        per_class[cls] = _pq_from_match(match)
    mpq = (
        sum(stats.pq for stats in per_class.values()) / len(per_class)
        if per_class
        else None
    )
    return PQResult(per_class=per_class, mpq=mpq)


def aggregate_panoptic(results: list[PQResult], mode: str = "per_image") -> PQResult:
    """Combine per-image results.

    ``per_image`` (default): each class's PQ is its mean over the images
    where the class appears; mPQ is the mean of those class values.
    ``pooled``: TP/FP/FN and IoU sums pool over images before the formula.
    """
    if mode not in ("per_image", "pooled"):
        raise MetricError(f"unknown aggregation mode {mode!r}")
    if not results:
        raise MetricError("no results to aggregate")
    per_class = {}
    for cls in CellClass:
        stats = [r.per_class[cls] for r in results if cls in r.per_class]
        if not stats:
            continue
        if mode == "per_image":
            per_class[cls] = ClassPQ(
                pq=sum(s.pq for s in stats) / len(stats),
                sq=sum(s.sq for s in stats) / len(stats),
                rq=sum(s.rq for s in stats) / len(stats),
                tp=sum(s.tp for s in stats),
                fp=sum(s.fp for s in stats),
                fn=sum(s.fn for s in stats),
                sum_iou=sum(s.sum_iou for s in stats),
            )
        else:
            tp = sum(s.tp for s in stats)
            fp = sum(s.fp for s in stats)
            fn = sum(s.fn for s in stats)
            sum_iou = sum(s.sum_iou for s in stats)
            denom = tp + 0.5 * fp + 0.5 * fn
            per_class[cls] = ClassPQ(
                pq=sum_iou / denom if denom else 0.0,
                sq=sum_iou / tp if tp else 0.0,
                rq=tp / denom if denom else 0.0,
                tp=tp,
                fp=fp,
                fn=fn,
                sum_iou=sum_iou,
            )
    mpq = (
        sum(stats.pq for stats in per_class.values()) / len(per_class)
        if per_class
        else None
    )
    return PQResult(per_class=per_class, mpq=mpq)


# ---------------------------------------------------------------------------
# classification agreement on matched pairs


@dataclass(frozen=True)
class F1Result:
    per_class: dict  # CellClass -> F1 or None (no support among pairs)
    macro_f1: Optional[float]
    confusion: dict  # gt CellClass -> pred CellClass -> count
    n_pairs: int = 0


def classification_f1(
    pred: InstanceLabelMap, gt: InstanceLabelMap, iou_threshold: float = PQ_IOU_THRESHOLD
) -> F1Result:
    """One-vs-rest F1 per class over detection-matched instance pairs.

    Matching is class-agnostic; only paired instances are judged, so this
    isolates classification quality from detection quality. Classes with no
    paired support are null and excluded from the macro mean.
    """
    match = match_instances(pred, gt, iou_threshold)
    pairs = [(gt.classes[gid], pred.classes[pid]) for gid, pid, _ in match.tp]
    return _f1_from_pairs(pairs)


def _f1_from_pairs(pairs) -> F1Result:
    confusion = {g: {p: 0 for p in CellClass} for g in CellClass}
    for g_cls, p_cls in pairs:
        confusion[g_cls][p_cls] += 1
    per_class = {}
    defined = []
    for cls in CellClass:
        tp = confusion[cls][cls]
        fn = sum(confusion[cls][p] for p in CellClass) - tp
        fp = sum(confusion[g][cls] for g in CellClass) - tp
        if tp + fp + fn == 0:
            per_class[cls] = None
            continue
        f1 = 2.0 * tp / (2.0 * tp + fp + fn)
        per_class[cls] = f1
        defined.append(f1)
    macro = sum(defined) / len(defined) if defined else None
    return F1Result(
        per_class=per_class, macro_f1=macro, confusion=confusion, n_pairs=len(pairs)
    )


def aggregate_f1(results: list[F1Result]) -> F1Result:
    """Pool confusion matrices across images, then recompute the F1s."""
    if not results:
        raise MetricError("no results to aggregate")
    pairs = []
    for r in results:
        for g_cls in CellClass:
            for p_cls in CellClass:
                pairs.extend([(g_cls, p_cls)] * r.confusion[g_cls][p_cls])
    return _f1_from_pairs(pairs)


# ---------------------------------------------------------------------------
# binary semantic segmentation


@dataclass(frozen=True)
class SemanticResult:
    iou_tissue: float
    miou: float
    acc_tissue: Optional[float]
    macc: float


def semantic_iou(pred_mask: np.ndarray, gt_mask: np.ndarray) -> SemanticResult:
    """Foreground IoU, mean IoU over {foreground, background}, foreground
    recall, and mean per-class recall. Empty-union classes count as 1.0."""
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if pred_mask.shape != gt_mask.shape:
        raise MetricError(f"mask shapes differ: {pred_mask.shape} vs {gt_mask.shape}")
    if pred_mask.size == 0:
        raise MetricError("masks are empty")

    def iou(p, g):
        union = int((p | g).sum())
        return 1.0 if union == 0 else int((p & g).sum()) / union

    iou_fg = iou(pred_mask, gt_mask)
    iou_bg = iou(~pred_mask, ~gt_mask)
    fg_total = int(gt_mask.sum())
    bg_total = gt_mask.size - fg_total
    acc_fg = int((pred_mask & gt_mask).sum()) / fg_total if fg_total else None
    acc_bg = int((~pred_mask & ~gt_mask).sum()) / bg_total if bg_total else None
    recalls = [r for r in (acc_fg, acc_bg) if r is not None]
    return SemanticResult(
        iou_tissue=iou_fg,
        miou=(iou_fg + iou_bg) / 2.0,
        acc_tissue=acc_fg,
        macc=sum(recalls) / len(recalls),
    )
