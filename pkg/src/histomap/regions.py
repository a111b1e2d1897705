"""Spatial alignment of cells against the tumor mask.

Builds the :class:`AlignedSlide` artifact: tumor connected components with
deterministic labels, the vicinity band around tumor tissue, a region tag
per cell, and the class refinement that reconciles the classifier's tumor
calls with the mask.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import TaggingError
from .model import (
    AlignedSlide,
    CellClass,
    CellRecord,
    RegionTag,
    SlideMeta,
    TumorInstance,
    TumorMask,
)

DEFAULT_VICINITY_UM = 1000.0

# 8-connectivity: diagonal pixel contact joins tumor regions.
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def refine_classes(cells: list[CellRecord], tags: list[RegionTag]) -> list[CellRecord]:
    """Reassign tumor-class cells outside tumor regions to EPITHELIAL.

    The mask arbitrates: a nucleus the classifier called tumor but that sits
    in the vicinity or outside regions is kept as epithelial rather than
    discarded. Idempotent, order-preserving; non-tumor classes untouched.
    """
    if len(cells) != len(tags):
        raise TaggingError("cells and tags must be parallel")
    out = []
    for rec, tag in zip(cells, tags):
        if rec.cell_class is CellClass.TUMOR and tag is not RegionTag.TUMOR:
            rec = dataclasses.replace(rec, cell_class=CellClass.EPITHELIAL)
        out.append(rec)
    return out


def label_tumor_instances(mask: TumorMask, downsample: int) -> tuple[np.ndarray, list[TumorInstance]]:
    """8-connected components with deterministic labels and full-res bboxes.

    Labels are 1..K ordered by each component's first pixel in row-major
    scan order, so identical bitmaps always yield identical labelings.
    Bounding boxes are half-open in full-resolution pixels; extents l_t /
    w_t are the box width and height in those pixels.
    """
    raw, count = ndimage.label(mask.bitmap, structure=_STRUCTURE_8)
    raster = np.zeros_like(raw, dtype=np.int32)
    instances: list[TumorInstance] = []
    if count == 0:
        return raster, instances

    flat = raw.ravel()
    first_index = np.full(count + 1, flat.size, dtype=np.int64)
    nonzero = np.flatnonzero(flat)
    # reversed scan: earlier indices overwrite later ones
    first_index[flat[nonzero[::-1]]] = nonzero[::-1]
    order = np.argsort(first_index[1:], kind="stable")  # old label - 1, by first pixel

    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, count + 1)
    raster = remap[raw]

    objects = ndimage.find_objects(raw)
    pixel_counts = np.bincount(flat, minlength=count + 1)
    for new_label, old_index in enumerate(order, start=1):
        sl_y, sl_x = objects[old_index]
        x0 = sl_x.start * downsample
        y0 = sl_y.start * downsample
        x1 = sl_x.stop * downsample
        y1 = sl_y.stop * downsample
        instances.append(
            TumorInstance(
                label=new_label,
                bbox=(x0, y0, x1, y1),
                l_t=float(x1 - x0),
                w_t=float(y1 - y0),
                pixel_count=int(pixel_counts[old_index + 1]),
            )
        )
    return raster, instances


def vicinity_bitmap(mask: TumorMask, meta: SlideMeta, width_um: float = DEFAULT_VICINITY_UM) -> np.ndarray:
    """Band of non-tumor mask pixels within ``width_um`` of tumor tissue.

    Distance is the exact Euclidean distance transform on the mask grid;
    a pixel belongs to the vicinity when 0 < d <= width_um converted to
    mask pixels. No tumor anywhere means no vicinity.
    """
    if width_um <= 0:
        raise TaggingError("vicinity width must be positive")
    if not mask.bitmap.any():
        return np.zeros_like(mask.bitmap)
    dist = ndimage.distance_transform_edt(~mask.bitmap)
    radius = width_um / (meta.microns_per_pixel * meta.mask_downsample)
    return (dist > 0) & (dist <= radius)


def _cell_mask_indices(cells, meta: SlideMeta, mask: TumorMask) -> tuple[np.ndarray, np.ndarray]:
    xs = np.array([rec.x for rec in cells], dtype=np.float64)
    ys = np.array([rec.y for rec in cells], dtype=np.float64)
    cols = np.floor(xs / meta.mask_downsample).astype(np.int64)
    rows = np.floor(ys / meta.mask_downsample).astype(np.int64)
    # centroids on the slide's right/bottom edge land in the last mask cell
    cols = np.clip(cols, 0, mask.width - 1)
    rows = np.clip(rows, 0, mask.height - 1)
    return rows, cols


def align_slide(
    meta: SlideMeta,
    cells: list[CellRecord],
    mask: TumorMask,
    vicinity_um: Optional[float] = None,
) -> AlignedSlide:
    """Tag every cell with its region, refine classes, build the artifact.

    Pipeline: components -> vicinity -> per-cell tags (mask cell containing
    the centroid) -> tumor-class refinement against the tags. A cell is in
    tumor iff its mask cell is tumor, in the vicinity iff its mask cell is
    in the band, outside otherwise. Cells whose centroid falls outside the
    slide raise TaggingError with the nucleus id.

    Band width resolution: explicit argument, then ``meta.vicinity_um``,
    then the analysis default.
    """
    if vicinity_um is None:
        vicinity_um = meta.vicinity_um if meta.vicinity_um is not None else DEFAULT_VICINITY_UM
    if (mask.width, mask.height) != (meta.mask_width, meta.mask_height):
        raise TaggingError(
            f"mask is {mask.width}x{mask.height}, meta implies "
            f"{meta.mask_width}x{meta.mask_height}"
        )
    for rec in cells:
        if rec.x >= meta.width_px or rec.y >= meta.height_px:
            raise TaggingError(
                f"nucleus {rec.id} at ({rec.x}, {rec.y}) lies outside the "
                f"{meta.width_px}x{meta.height_px} slide",
                cell_id=rec.id,
            )

    raster, instances = label_tumor_instances(mask, meta.mask_downsample)
    vicinity = vicinity_bitmap(mask, meta, vicinity_um)

    tags: list[RegionTag] = []
    tumor_ids: list[int | None] = []
    if cells:
        rows, cols = _cell_mask_indices(cells, meta, mask)
        for i in range(len(cells)):
            label = int(raster[rows[i], cols[i]])
            if label:
                tags.append(RegionTag.TUMOR)
                tumor_ids.append(label)
            elif vicinity[rows[i], cols[i]]:
                tags.append(RegionTag.VICINITY)
                tumor_ids.append(None)
            else:
                tags.append(RegionTag.OUTSIDE)
                tumor_ids.append(None)

    refined = refine_classes(cells, tags)
    return AlignedSlide(
        meta=meta,
        cells=tuple(refined),
        tumor_mask=mask,
        tumor_instances=tuple(instances),
        cell_region_tags=tuple(tags),
        cell_tumor_ids=tuple(tumor_ids),
        vicinity_bitmap=vicinity,
        instance_raster=raster,
    )


def region_areas_um2(slide: AlignedSlide) -> dict[RegionTag, float]:
    """Region areas in square microns on the mask grid.

    The whole-slide area is the full mask grid extent, so the three regions
    partition it: outside = total - tumor - vicinity.
    """
    meta = slide.meta
    cell_um2 = (meta.microns_per_pixel * meta.mask_downsample) ** 2
    tumor_px = int(slide.tumor_mask.bitmap.sum())
    vicinity_px = int(slide.vicinity_bitmap.sum())
    total_px = slide.tumor_mask.width * slide.tumor_mask.height
    if math.isinf(cell_um2):
        raise TaggingError("mask cell area overflows")
    return {
        RegionTag.TUMOR: tumor_px * cell_um2,
        RegionTag.VICINITY: vicinity_px * cell_um2,
        RegionTag.OUTSIDE: (total_px - tumor_px - vicinity_px) * cell_um2,
    }
