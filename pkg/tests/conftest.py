"""Shared builders for the test suite.

Slides built here are random in content but deterministic per seed; the
oracle-based tests rely on that to pin down exact expected values.
"""

from __future__ import annotations

import random

import numpy as np
import pytest

from histomap.model import (
    CellClass,
    CellRecord,
    INGESTIBLE_CLASSES,
    SlideMeta,
    TumorMask,
)
from histomap.regions import align_slide


def square_contour(cx: float, cy: float, side: float):
    h = side / 2.0
    return (
        (cx - h, cy - h),
        (cx + h, cy - h),
        (cx + h, cy + h),
        (cx - h, cy + h),
    )


def random_mask_grid(rng: random.Random, mw: int, mh: int, n_blobs=(1, 4)) -> np.ndarray:
    grid = np.zeros((mh, mw), dtype=bool)
    yy, xx = np.ogrid[:mh, :mw]
    for _ in range(rng.randrange(*n_blobs)):
        cx = rng.randrange(mw // 8, mw - mw // 8)
        cy = rng.randrange(mh // 8, mh - mh // 8)
        r = rng.randrange(2, max(3, mw // 6))
        grid |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return grid


def random_slide(
    seed: int,
    mw: int = 64,
    mh: int = 64,
    downsample: int = 16,
    mpp: float = 0.25,
    n_cells=(50, 400),
    vicinity_um: float = 200.0,
    with_contours: bool = False,
):
    """Seeded random slide: blobby mask, uniform cells of ingestible classes."""
    rng = random.Random(seed)
    grid = random_mask_grid(rng, mw, mh)
    meta = SlideMeta(mw * downsample, mh * downsample, mpp, downsample)
    mask = TumorMask(mw, mh, grid)
    n = rng.randrange(*n_cells)
    cells = []
    for i in range(1, n + 1):
        x = rng.uniform(0.0, mw * downsample - 1e-6)
        y = rng.uniform(0.0, mh * downsample - 1e-6)
        cls = rng.choice(list(INGESTIBLE_CLASSES))
        contour = None
        if with_contours and rng.random() < 0.7:
            contour = square_contour(x, y, rng.uniform(4.0, 12.0))
        cells.append(CellRecord(id=i, x=x, y=y, cell_class=cls, contour=contour))
    return align_slide(meta, cells, mask, vicinity_um)


@pytest.fixture
def planted_cohort():
    """Two complementary binary signals determine y; distractors are a
    perfect duplicate and constants, so ranking and the accuracy curve are
    fully determined."""
    from histomap.selection import Cohort

    n = 48
    a = np.zeros(n)
    b = np.zeros(n)
    a[:12] = 1.0
    b[12:24] = 1.0
    y = ((a + b) > 0).astype(np.int64)
    X = np.column_stack([a, b, 3.0 * a - 1.0, np.full(n, 0.5), np.full(n, -2.0)])
    names = ("sig_a", "sig_b", "dup_a", "const_1", "const_2")
    ids = tuple(f"s{i:03d}" for i in range(n))
    return Cohort(X=X, y=y, feature_names=names, sample_ids=ids)
