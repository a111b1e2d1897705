"""Canonical domain types shared by every stage of the pipeline.

All types are immutable after construction and safe to share read-only
across worker processes. Coordinates of cells are full-resolution pixels;
tumor masks live on the downsampled grid of their ``SlideMeta`` and every
point-in-mask test divides full-resolution coordinates by
``mask_downsample`` with floor rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import MorphologyError


class CellClass(Enum):
    """The six nucleus classes.

    Ingestion only ever produces the first five; EPITHELIAL is assigned
    exclusively by the classification refinement step.
    """

    GRANULOCYTE = "granulocyte"
    LYMPHOCYTE = "lymphocyte"
    PLASMA = "plasma"
    STROMAL = "stromal"
    TUMOR = "tumor"
    EPITHELIAL = "epithelial"


#: Classes a cell document may contain (refinement adds EPITHELIAL later).
INGESTIBLE_CLASSES = (
    CellClass.GRANULOCYTE,
    CellClass.LYMPHOCYTE,
    CellClass.PLASMA,
    CellClass.STROMAL,
    CellClass.TUMOR,
)

#: Classes participating in closest-distance features, canonical order.
DISTANCE_CLASSES = (
    CellClass.GRANULOCYTE,
    CellClass.LYMPHOCYTE,
    CellClass.PLASMA,
    CellClass.TUMOR,
)


class RegionTag(Enum):
    """Where a cell sits relative to the tumor mask. Tags partition cells."""

    TUMOR = "tumor"
    VICINITY = "vicinity"
    OUTSIDE = "outside"


Point = tuple[float, float]
Contour = tuple[Point, ...]


def signed_area(contour) -> float:
    """Shoelace signed area of a closed polygon given as vertex sequence."""
    total = 0.0
    n = len(contour)
    for i in range(n):
        x0, y0 = contour[i]
        x1, y1 = contour[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return 0.5 * total


def perimeter(contour) -> float:
    total = 0.0
    n = len(contour)
    for i in range(n):
        x0, y0 = contour[i]
        x1, y1 = contour[(i + 1) % n]
        total += math.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2)
    return total


def normalize_contour(contour) -> Contour:
    """Return the contour as a tuple of float pairs with positive signed area.

    Reverses clockwise input. Raises MorphologyError when there are fewer
    than 3 vertices or the polygon has no area to orient.
    """
    pts = tuple((float(x), float(y)) for x, y in contour)
    if len(pts) < 3:
        raise MorphologyError(f"contour needs >=3 vertices, got {len(pts)}")
    area = signed_area(pts)
    if area < 0:
        pts = pts[::-1]
    elif area == 0:
        raise MorphologyError("contour has zero signed area")
    return pts


def morphology(contour) -> tuple[float, float]:
    """Area (px^2) and circularity of a simple closed polygon.

    Circularity is ``4*pi*area / perimeter**2`` clamped to [0, 1]; the clamp
    absorbs discretization noise on near-circular contours so downstream
    statistics can assume bounded values.
    """
    if len(contour) < 3:
        raise MorphologyError(f"contour needs >=3 vertices, got {len(contour)}")
    per = perimeter(contour)
    if per == 0.0:
        raise MorphologyError("contour has zero perimeter")
    area = abs(signed_area(contour))
    if area == 0.0:
        raise MorphologyError("contour has zero area")
    circ = 4.0 * math.pi * area / (per * per)
    return area, min(max(circ, 0.0), 1.0)


@dataclass(frozen=True)
class CellRecord:
    """One classified nucleus.

    ``contour`` is optional; when present it has been orientation-normalized
    (positive signed area) and has at least 3 vertices.
    """

    id: int
    x: float
    y: float
    cell_class: CellClass
    contour: Optional[Contour] = None
    class_confidence: Optional[float] = None

    def __post_init__(self):
        if self.contour is not None:
            object.__setattr__(self, "contour", normalize_contour(self.contour))

    @property
    def centroid(self) -> Point:
        return (self.x, self.y)


@dataclass(frozen=True)
class SlideMeta:
    """Slide geometry: full-resolution size, physical resolution, mask scale.

    ``vicinity_um`` records the peritumoral band width the slide was (or
    should be) analyzed with; None means the analysis default applies.
    """

    width_px: int
    height_px: int
    microns_per_pixel: float
    mask_downsample: int = 32
    vicinity_um: Optional[float] = None

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("slide dimensions must be positive")
        if self.microns_per_pixel <= 0:
            raise ValueError("microns_per_pixel must be positive")
        if self.mask_downsample < 1:
            raise ValueError("mask_downsample must be >= 1")
        if self.vicinity_um is not None and self.vicinity_um <= 0:
            raise ValueError("vicinity_um must be positive when set")

    @property
    def mask_width(self) -> int:
        return -(-self.width_px // self.mask_downsample)

    @property
    def mask_height(self) -> int:
        return -(-self.height_px // self.mask_downsample)


@dataclass(frozen=True, eq=False)
class TumorMask:
    """Dense binary tumor raster on the downsampled grid, row-major."""

    width: int
    height: int
    bitmap: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        bm = np.ascontiguousarray(self.bitmap, dtype=bool)
        if bm.shape != (self.height, self.width):
            raise ValueError(
                f"bitmap shape {bm.shape} != (height={self.height}, width={self.width})"
            )
        bm.flags.writeable = False
        object.__setattr__(self, "bitmap", bm)

    def matches(self, meta: SlideMeta) -> bool:
        return self.width == meta.mask_width and self.height == meta.mask_height


@dataclass(frozen=True)
class TumorInstance:
    """One 8-connected tumor component.

    The bounding box is reported in full-resolution pixels: mask-grid extents
    multiplied by ``mask_downsample``, upper edges exclusive. ``l_t`` is the
    x extent and ``w_t`` the y extent; both drive the distance search
    rectangle.
    """

    label: int
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max
    l_t: float
    w_t: float
    pixel_count: int

    def __post_init__(self):
        if self.l_t <= 0 or self.w_t <= 0:
            raise ValueError("bounding box extents must be positive")
        if self.pixel_count <= 0:
            raise ValueError("pixel_count must be positive")


@dataclass(frozen=True, eq=False)
class AlignedSlide:
    """Cells, mask and metadata in one consistent coordinate frame.

    ``cell_region_tags`` and ``cell_tumor_ids`` are parallel to ``cells``;
    a cell has a tumor id iff its tag is TUMOR. ``vicinity_bitmap`` is kept
    so region areas (densities) can be computed without re-deriving the ring.
    """

    meta: SlideMeta
    cells: tuple[CellRecord, ...]
    tumor_mask: TumorMask
    tumor_instances: tuple[TumorInstance, ...]
    cell_region_tags: tuple[RegionTag, ...]
    cell_tumor_ids: tuple[Optional[int], ...]
    vicinity_bitmap: np.ndarray = field(repr=False)
    instance_raster: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.cells)
        if len(self.cell_region_tags) != n or len(self.cell_tumor_ids) != n:
            raise ValueError("per-cell annotations must match the cell count")
        for cell, tag, tid in zip(self.cells, self.cell_region_tags, self.cell_tumor_ids):
            if (tag is RegionTag.TUMOR) != (tid is not None):
                raise ValueError(
                    f"cell {cell.id}: tumor id must be present iff tagged TUMOR"
                )
        for name in ("vicinity_bitmap", "instance_raster"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_cells(self) -> int:
        return len(self.cells)
