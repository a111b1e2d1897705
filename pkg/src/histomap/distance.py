"""Expanding-rectangle nearest-neighbour distances inside tumor regions.

For a source nucleus in a tumor region, grow a rectangle centred on it in
integer levels ``lam = 1, 2, ...`` with total extents ``f * lam * l_t`` by
``f * lam * w_t``, where ``l_t`` / ``w_t`` are the bounding-box extents of
that tumor region and ``f`` is the rectangle growth factor. At the first
level containing at least one target nucleus, the source's distance is the
smallest Euclidean distance to a target inside the rectangle. The
slide-level feature is the mean of these distances over eligible sources.

Membership is boundary-inclusive and decided by the frozen predicate

    abs(dx) <= 0.5 * f * lam * l_t  and  abs(dy) <= 0.5 * f * lam * w_t

evaluated left to right in float64. Two implementations exist: the engine
(:func:`nearest_in_rectangle` / :func:`mean_closest_distance`), which jumps
straight to each target's minimal level, and a level-stepping reference
(:func:`nearest_in_rectangle_bruteforce` / :func:`brute_force_mean_closest_distance`).
They must agree bit for bit; tests enforce this.

Sources and targets are confined to the same tumor region. A source in a
region with no targets is skipped and counted. Slide means accumulate
per-source distances in ascending source-id order, so results never depend
on grouping or worker scheduling.

The rectangle stops at the first level with any target, which can overshoot
the true nearest neighbour (a nearer target can sit outside the rectangle
that first caught another). :func:`true_nn_mean_distance` computes the
exact nearest-neighbour mean for comparison, and
:func:`estimate_overestimation_probability` measures how often the
rectangle answer is wrong for uniformly scattered targets.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Optional

import numpy as np

from .errors import DistanceUndefined, NoTargetError, ParameterError
from .model import AlignedSlide, CellClass, DISTANCE_CLASSES, RegionTag

DEFAULT_RECTANGLE_FACTOR = 0.05


@dataclass(frozen=True)
class DistanceSpec:
    """One source-class to target-class computation with its growth factor."""

    source: CellClass
    target: CellClass
    f: float = DEFAULT_RECTANGLE_FACTOR

    def __post_init__(self):
        if self.source is self.target:
            raise ParameterError("distance spec needs two distinct classes")
        if not self.f > 0:
            raise ParameterError("rectangle growth factor must be positive")

    @property
    def name(self) -> str:
        return f"dist_{self.source.value}_{self.target.value}"


@dataclass(frozen=True)
class DistanceResult:
    """Mean distance plus bookkeeping. ``mean_distance`` None = undefined."""

    source: CellClass
    target: CellClass
    mean_distance: Optional[float]
    per_tumor_means: dict = field(default_factory=dict)
    n_source_used: int = 0
    n_source_skipped: int = 0


def default_distance_specs(
    both_directions: bool = False, f: float = DEFAULT_RECTANGLE_FACTOR
) -> list[DistanceSpec]:
    """Class pairs measured by default: one direction per unordered pair of
    granulocyte/lymphocyte/plasma/tumor, source preceding target in class
    order. ``both_directions`` emits the reverse runs too."""
    gen = permutations if both_directions else combinations
    return [DistanceSpec(a, b, f) for a, b in gen(DISTANCE_CLASSES, 2)]


# ---------------------------------------------------------------------------
# single-source searches


def _min_level(adx: float, ady: float, l_t: float, w_t: float, f: float) -> int:
    """Smallest level whose rectangle contains the offset (adx, ady).

    A division-based estimate gets within one level; the loops then settle
    on the frozen predicate itself, so boundary ties resolve exactly as in
    the level-stepping reference.
    """
    lam = max(1, math.ceil(adx / (0.5 * f * l_t)), math.ceil(ady / (0.5 * f * w_t)))
    while not (adx <= 0.5 * f * lam * l_t and ady <= 0.5 * f * lam * w_t):
        lam += 1
    while lam > 1 and (
        adx <= 0.5 * f * (lam - 1) * l_t and ady <= 0.5 * f * (lam - 1) * w_t
    ):
        lam -= 1
    return lam


def nearest_in_rectangle(
    sx: float,
    sy: float,
    tx: np.ndarray,
    ty: np.ndarray,
    l_t: float,
    w_t: float,
    f: float = DEFAULT_RECTANGLE_FACTOR,
) -> tuple[float, int]:
    """Distance and stopping level for one source against target arrays.

    Computes each near-minimal target's first containing level directly
    instead of stepping levels one at a time.
    """
    tx = np.asarray(tx, dtype=np.float64)
    ty = np.asarray(ty, dtype=np.float64)
    if tx.size == 0:
        raise NoTargetError("no target nuclei in this tumor region")
    if l_t <= 0 or w_t <= 0 or f <= 0:
        raise ParameterError("rectangle extents and growth factor must be positive")

    adx = np.abs(tx - sx)
    ady = np.abs(ty - sy)
    est = np.maximum(np.ceil(adx / (0.5 * f * l_t)), np.ceil(ady / (0.5 * f * w_t)))
    est = np.maximum(est, 1.0)
    # the estimate is within one level of the true minimum, so every target
    # that could stop the search first sits inside this window
    window = np.flatnonzero(est <= est.min() + 2.0)

    levels = {j: _min_level(float(adx[j]), float(ady[j]), l_t, w_t, f) for j in window}
    best_level = min(levels.values())
    best = math.inf
    for j in window:
        if levels[j] == best_level:
            dx = float(tx[j]) - sx
            dy = float(ty[j]) - sy
            d = math.sqrt(dx * dx + dy * dy)
            if d < best:
                best = d
    return best, best_level


def nearest_in_rectangle_bruteforce(
    sx: float,
    sy: float,
    targets: list[tuple[float, float]],
    l_t: float,
    w_t: float,
    f: float = DEFAULT_RECTANGLE_FACTOR,
) -> tuple[float, int]:
    """Level-stepping reference, pure Python, no shortcuts.

    Grows the rectangle one level at a time and rescans every target at
    each level. The engine must match it bit for bit.
    """
    if not targets:
        raise NoTargetError("no target nuclei in this tumor region")
    if l_t <= 0 or w_t <= 0 or f <= 0:
        raise ParameterError("rectangle extents and growth factor must be positive")
    lam = 1
    while True:
        best = None
        for txj, tyj in targets:
            dx = txj - sx
            dy = tyj - sy
            if abs(dx) <= 0.5 * f * lam * l_t and abs(dy) <= 0.5 * f * lam * w_t:
                d = math.sqrt(dx * dx + dy * dy)
                if best is None or d < best:
                    best = d
        if best is not None:
            return best, lam
        lam += 1


# ---------------------------------------------------------------------------
# slide-level means


def _grouped_by_region(slide: AlignedSlide, cls: CellClass) -> dict[int, list]:
    grouped: dict[int, list] = defaultdict(list)
    for rec, tag, tid in zip(slide.cells, slide.cell_region_tags, slide.cell_tumor_ids):
        if tag is RegionTag.TUMOR and rec.cell_class is cls:
            grouped[tid].append(rec)
    return grouped


def _reduce(spec: DistanceSpec, per_source: dict[int, list[tuple[int, float]]], skipped: int) -> DistanceResult:
    """Fixed reduction: per-tumor means and the global mean both accumulate
    in ascending source-id order, making results scheduling-independent."""
    per_tumor: dict[int, float] = {}
    all_pairs: list[tuple[int, float]] = []
    for tid in sorted(per_source):
        pairs = sorted(per_source[tid])
        total = 0.0
        for _, d in pairs:
            total += d
        per_tumor[tid] = total / len(pairs)
        all_pairs.extend(pairs)
    if not all_pairs:
        return DistanceResult(spec.source, spec.target, None, {}, 0, skipped)
    all_pairs.sort()
    grand = 0.0
    for _, d in all_pairs:
        grand += d
    return DistanceResult(
        spec.source, spec.target, grand / len(all_pairs), per_tumor, len(all_pairs), skipped
    )


def _mean_impl(slide: AlignedSlide, spec: DistanceSpec) -> DistanceResult:
    sources = _grouped_by_region(slide, spec.source)
    targets = _grouped_by_region(slide, spec.target)
    extents = {inst.label: (inst.l_t, inst.w_t) for inst in slide.tumor_instances}

    per_source: dict[int, list[tuple[int, float]]] = {}
    skipped = 0
    for tid, recs in sources.items():
        tgt = targets.get(tid)
        if not tgt:
            skipped += len(recs)
            continue
        l_t, w_t = extents[tid]
        tx = np.array([t.x for t in tgt], dtype=np.float64)
        ty = np.array([t.y for t in tgt], dtype=np.float64)
        pairs = []
        for rec in recs:
            d, _ = nearest_in_rectangle(rec.x, rec.y, tx, ty, l_t, w_t, spec.f)
            pairs.append((rec.id, d))
        per_source[tid] = pairs
    return _reduce(spec, per_source, skipped)


def mean_closest_distance(slide: AlignedSlide, spec: DistanceSpec) -> DistanceResult:
    """Slide-level mean rectangle-search distance for one class pair.

    Raises DistanceUndefined when no source contributes (no in-tumor
    sources, or every source sits in a target-free region); feature
    assembly turns that into a null feature instead.
    """
    result = _mean_impl(slide, spec)
    if result.mean_distance is None:
        raise DistanceUndefined(
            f"{spec.name}: no eligible source nuclei "
            f"({result.n_source_skipped} skipped in target-free regions)"
        )
    return result


def brute_force_mean_closest_distance(slide: AlignedSlide, spec: DistanceSpec) -> DistanceResult:
    """Reference twin of :func:`mean_closest_distance`: same eligibility,
    skip, and reduction rules, but every search steps levels explicitly."""
    sources = _grouped_by_region(slide, spec.source)
    targets = _grouped_by_region(slide, spec.target)
    extents = {inst.label: (inst.l_t, inst.w_t) for inst in slide.tumor_instances}

    per_source: dict[int, list[tuple[int, float]]] = {}
    skipped = 0
    for tid, recs in sources.items():
        tgt = targets.get(tid)
        if not tgt:
            skipped += len(recs)
            continue
        l_t, w_t = extents[tid]
        points = [(t.x, t.y) for t in tgt]
        pairs = []
        for rec in recs:
            d, _ = nearest_in_rectangle_bruteforce(rec.x, rec.y, points, l_t, w_t, spec.f)
            pairs.append((rec.id, d))
        per_source[tid] = pairs
    result = _reduce(spec, per_source, skipped)
    if result.mean_distance is None:
        raise DistanceUndefined(
            f"{spec.name}: no eligible source nuclei "
            f"({result.n_source_skipped} skipped in target-free regions)"
        )
    return result


def true_nn_mean_distance(slide: AlignedSlide, spec: DistanceSpec) -> DistanceResult:
    """Exact nearest-neighbour mean under the same eligibility rules.

    No rectangle: each source takes its globally nearest same-region
    target. The rectangle mean is an upper bound on this value.
    """
    sources = _grouped_by_region(slide, spec.source)
    targets = _grouped_by_region(slide, spec.target)

    per_source: dict[int, list[tuple[int, float]]] = {}
    skipped = 0
    for tid, recs in sources.items():
        tgt = targets.get(tid)
        if not tgt:
            skipped += len(recs)
            continue
        pairs = []
        for rec in recs:
            best = math.inf
            for t in tgt:
                dx = t.x - rec.x
                dy = t.y - rec.y
                d = math.sqrt(dx * dx + dy * dy)
                if d < best:
                    best = d
            pairs.append((rec.id, best))
        per_source[tid] = pairs
    result = _reduce(spec, per_source, skipped)
    if result.mean_distance is None:
        raise DistanceUndefined(
            f"{spec.name}: no eligible source nuclei "
            f"({result.n_source_skipped} skipped in target-free regions)"
        )
    return result


def compute_distance_results(
    slide: AlignedSlide, specs: Optional[list[DistanceSpec]] = None
) -> list[DistanceResult]:
    """All specs in order; undefined means come back as None, not errors."""
    if specs is None:
        specs = default_distance_specs()
    return [_mean_impl(slide, spec) for spec in specs]


# ---------------------------------------------------------------------------
# rectangle-overshoot probability


def estimate_overestimation_probability(
    n_cells: int, trials: int, seed: int = 0
) -> float:
    """Monte Carlo frequency of the rectangle search overshooting.

    Model: ``n_cells`` targets uniform in the disk of radius sqrt(2) * r1
    around a source; trials are conditioned on at least one target falling
    in the axis-aligned square of half-side r1 (the first rectangle that
    catches anything). The error event: the globally nearest target lies
    outside that square, strictly nearer than every in-square target.
    Returns error count / conditioned-trial count.
    """
    if n_cells < 1:
        raise ParameterError("n_cells must be at least 1")
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    chunk = max(1, min(trials, 4_000_000 // max(n_cells, 1)))
    conditioned = 0
    errors = 0
    remaining = trials
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        # uniform in the disk: radius sqrt(2)*sqrt(U), angle uniform
        r = math.sqrt(2.0) * np.sqrt(rng.random((m, n_cells)))
        theta = rng.random((m, n_cells)) * (2.0 * math.pi)
        x = r * np.cos(theta)
        y = r * np.sin(theta)
        in_square = (np.abs(x) <= 1.0) & (np.abs(y) <= 1.0)
        has_in = in_square.any(axis=1)
        r_in = np.where(in_square, r, np.inf).min(axis=1)
        r_out = np.where(~in_square, r, np.inf).min(axis=1)
        conditioned += int(has_in.sum())
        errors += int((has_in & (r_out < r_in)).sum())
    if conditioned == 0:
        raise ParameterError("no trial produced an in-square target; increase trials")
    return errors / conditioned
