"""Worker-count plumbing with scheduling-independent results.

Distance computations fan out over class-pair specs in a process pool;
results come back in submission order and every reduction downstream is
order-fixed, so output bytes are identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from .distance import DistanceResult, DistanceSpec, _mean_impl
from .errors import ParameterError
from .features import FeatureRegistry, FeatureVector, extract_features
from .model import AlignedSlide

WORKERS_ENV = "HM_WORKERS"


def resolve_workers(requested: Optional[int] = None) -> int:
    """Precedence: explicit value, then the HM_WORKERS variable, then cores."""
    value = requested
    if value is None:
        env = os.environ.get(WORKERS_ENV)
        if env is not None:
            try:
                value = int(env)
            except ValueError:
                raise ParameterError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    if value is None:
        value = os.cpu_count() or 1
    if value < 1:
        raise ParameterError("worker count must be at least 1")
    return value


def _distance_task(args) -> DistanceResult:
    slide, spec = args
    return _mean_impl(slide, spec)


def compute_distances_parallel(
    slide: AlignedSlide, specs: list[DistanceSpec], workers: int
) -> list[DistanceResult]:
    if workers == 1 or len(specs) <= 1:
        return [_mean_impl(slide, spec) for spec in specs]
    with ProcessPoolExecutor(max_workers=min(workers, len(specs))) as pool:
        # map preserves submission order, so the reduction sees a fixed order
        return list(pool.map(_distance_task, [(slide, spec) for spec in specs]))


def extract_features_parallel(
    slide: AlignedSlide,
    registry: Optional[FeatureRegistry] = None,
    workers: Optional[int] = None,
    rectangle_factor: float = 0.05,
    distances_in_um: bool = False,
) -> FeatureVector:
    """`extract_features` with the rectangle searches spread over workers."""
    if registry is None:
        registry = FeatureRegistry.default()
    workers = resolve_workers(workers)
    specs = [
        DistanceSpec(fd.class_a, fd.class_b, rectangle_factor)
        for fd in registry.features
        if fd.kind == "dist"
    ]
    results = compute_distances_parallel(slide, specs, workers)
    return extract_features(
        slide,
        registry,
        rectangle_factor=rectangle_factor,
        distances_in_um=distances_in_um,
        distance_results=results,
    )
