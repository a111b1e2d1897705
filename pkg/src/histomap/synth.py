"""Seeded synthetic slides with analytically known ground truth.

The generator rasterizes elliptical tumor blobs, places nuclei uniformly
inside chosen regions with exact planted counts, and can pin single
source/target cell pairs inside dedicated blobs so the mean closest
distance is known in closed form. It emits the same wire formats the
ingest layer reads, plus a ground-truth JSON of every feature value that is
analytically fixed by construction.

Exactness rules enforced at validation time:
  - blobs must rasterize non-empty and pairwise non-adjacent under
    8-connectivity, so the tumor instance count equals the blob count;
  - a blob carries at most one distance pair, and classes involved in any
    distance pair may not be planted into tumor regions elsewhere, so each
    pair is the only source/target pair its search can see.

Cells are placed by sampling a mask cell of the requested region and a
uniform position inside it, so planted per-region counts are exact by
construction, not in expectation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GenerationError, ParseError
from .io import CLASS_TO_CODE
from .model import (
    CellClass,
    CellRecord,
    INGESTIBLE_CLASSES,
    RegionTag,
    SlideMeta,
    TumorMask,
)
from .regions import (
    DEFAULT_VICINITY_UM,
    align_slide,
    label_tumor_instances,
    region_areas_um2,
    vicinity_bitmap,
)

_CLASS_BY_TOKEN = {cls.value: cls for cls in CellClass}
_REGIONS = ("tumor", "vicinity", "outside")


@dataclass(frozen=True)
class EllipseSpec:
    """Tumor blob in mask-grid coordinates; pixels are included when their
    center lies inside the ellipse."""

    cx: float
    cy: float
    rx: float
    ry: float


@dataclass(frozen=True)
class PlantedCount:
    cell_class: CellClass
    region: str  # tumor | vicinity | outside
    count: int
    blob: Optional[int] = None  # tumor region only: restrict to one blob


@dataclass(frozen=True)
class DistancePair:
    """One source and one target at known coordinates inside one blob."""

    source: CellClass
    target: CellClass
    blob: int
    x: float
    y: float
    dx: float
    dy: float


@dataclass(frozen=True)
class SynthConfig:
    width_px: int
    height_px: int
    microns_per_pixel: float
    mask_downsample: int
    blobs: tuple = ()
    planted: tuple = ()
    distance_pairs: tuple = ()
    contour_side: Optional[float] = None
    vicinity_um: float = DEFAULT_VICINITY_UM
    seed: int = 0


@dataclass(frozen=True)
class GroundTruth:
    planted_counts: dict  # class token -> region token -> count (post-refinement)
    expected_features: dict  # feature name -> float | None
    n_tumor_instances: int


@dataclass(frozen=True, eq=False)
class SynthResult:
    meta: SlideMeta
    cells: tuple
    mask: TumorMask
    truth: GroundTruth


def rasterize_blobs(config: SynthConfig, meta: SlideMeta) -> TumorMask:
    h, w = meta.mask_height, meta.mask_width
    bitmap = np.zeros((h, w), dtype=bool)
    cols = np.arange(w) + 0.5
    rows = np.arange(h) + 0.5
    for blob in config.blobs:
        if blob.rx <= 0 or blob.ry <= 0:
            raise GenerationError("blob radii must be positive")
        term_x = ((cols - blob.cx) / blob.rx) ** 2
        term_y = ((rows - blob.cy) / blob.ry) ** 2
        inside = term_y[:, None] + term_x[None, :] <= 1.0
        if not inside.any():
            raise GenerationError(f"blob {blob} rasterizes to zero pixels")
        bitmap |= inside
    return TumorMask(width=w, height=h, bitmap=bitmap)


def _blob_labels(config: SynthConfig, mask: TumorMask, raster: np.ndarray, n_found: int) -> list[int]:
    """Map each config blob to its component label; reject merged/adjacent blobs."""
    if n_found != len(config.blobs):
        raise GenerationError(
            f"{len(config.blobs)} blobs produced {n_found} tumor instances; "
            "blobs must be pairwise non-adjacent"
        )
    labels = []
    for blob in config.blobs:
        col = min(mask.width - 1, max(0, int(blob.cx)))
        row = min(mask.height - 1, max(0, int(blob.cy)))
        label = int(raster[row, col])
        if label == 0:
            # center pixel not inside (thin ellipse); fall back to any pixel
            cols = np.arange(mask.width) + 0.5
            rows = np.arange(mask.height) + 0.5
            inside = ((rows[:, None] - blob.cy) / blob.ry) ** 2 + (
                (cols[None, :] - blob.cx) / blob.rx
            ) ** 2 <= 1.0
            r, c = np.argwhere(inside)[0]
            label = int(raster[r, c])
        labels.append(label)
    if len(set(labels)) != len(labels):
        raise GenerationError("two blobs merged into one tumor instance")
    return labels


def _validate(config: SynthConfig) -> None:
    if config.contour_side is not None and config.contour_side <= 0:
        raise GenerationError("contour_side must be positive")
    fixture_blobs = [p.blob for p in config.distance_pairs]
    if len(set(fixture_blobs)) != len(fixture_blobs):
        raise GenerationError("each blob may carry at most one distance pair")
    fixture_classes = {p.source for p in config.distance_pairs} | {
        p.target for p in config.distance_pairs
    }
    for pair in config.distance_pairs:
        if pair.source is pair.target:
            raise GenerationError("distance pair classes must differ")
        for cls in (pair.source, pair.target):
            if cls not in INGESTIBLE_CLASSES:
                raise GenerationError(f"{cls.value} has no wire code")
        if not 0 <= pair.blob < len(config.blobs):
            raise GenerationError(f"distance pair references blob {pair.blob}")
    for plant in config.planted:
        if plant.count < 0:
            raise GenerationError("planted counts must be non-negative")
        if plant.cell_class not in INGESTIBLE_CLASSES:
            raise GenerationError(f"{plant.cell_class.value} has no wire code")
        if plant.region not in _REGIONS:
            raise GenerationError(f"unknown region {plant.region!r}")
        if plant.blob is not None and plant.region != "tumor":
            raise GenerationError("blob restriction applies to tumor placement only")
        if plant.blob is not None and not 0 <= plant.blob < len(config.blobs):
            raise GenerationError(f"planted entry references blob {plant.blob}")
        if plant.region == "tumor" and plant.count > 0:
            if plant.cell_class in fixture_classes:
                raise GenerationError(
                    f"{plant.cell_class.value} participates in a distance pair; "
                    "planting it in tumor regions would break the closed form"
                )
            if config.distance_pairs and plant.blob is None:
                raise GenerationError(
                    "with distance pairs present, tumor placement must name a blob"
                )
            if plant.blob is not None and plant.blob in fixture_blobs:
                raise GenerationError(f"blob {plant.blob} is reserved for a distance pair")


def _sample_in_cells(rng, cells_rc: np.ndarray, count: int, meta: SlideMeta) -> list[tuple[float, float]]:
    ds = meta.mask_downsample
    picks = rng.integers(0, len(cells_rc), size=count)
    u = rng.random(count)
    v = rng.random(count)
    points = []
    for k in range(count):
        r, c = cells_rc[picks[k]]
        x0, x1 = c * ds, min((c + 1) * ds, meta.width_px)
        y0, y1 = r * ds, min((r + 1) * ds, meta.height_px)
        points.append((x0 + u[k] * (x1 - x0), y0 + v[k] * (y1 - y0)))
    return points


def _square_contour(x: float, y: float, side: float):
    h = side / 2.0
    return ((x - h, y - h), (x + h, y - h), (x + h, y + h), (x - h, y + h))


def generate(config: SynthConfig) -> SynthResult:
    """Build the slide and its ground truth. Same config, same result."""
    _validate(config)
    meta = SlideMeta(
        width_px=config.width_px,
        height_px=config.height_px,
        microns_per_pixel=config.microns_per_pixel,
        mask_downsample=config.mask_downsample,
        vicinity_um=config.vicinity_um,
    )
    mask = rasterize_blobs(config, meta)
    raster, instances = label_tumor_instances(mask, meta.mask_downsample)
    blob_labels = _blob_labels(config, mask, raster, len(instances)) if config.blobs else []
    vicinity = vicinity_bitmap(mask, meta, config.vicinity_um) if config.blobs else np.zeros_like(mask.bitmap)

    region_cells = {
        "vicinity": np.argwhere(vicinity),
        "outside": np.argwhere(~mask.bitmap & ~vicinity),
    }
    tumor_cells_by_blob = {i: np.argwhere(raster == lbl) for i, lbl in enumerate(blob_labels)}
    all_tumor = np.argwhere(raster > 0)

    rng = np.random.default_rng(config.seed)
    contour_side = config.contour_side

    records: list[CellRecord] = []
    counts: dict[CellClass, dict[str, int]] = {
        cls: dict.fromkeys(_REGIONS, 0) for cls in CellClass
    }
    next_id = 1

    def place(cls: CellClass, region: str, x: float, y: float):
        nonlocal next_id
        effective = cls
        if cls is CellClass.TUMOR and region != "tumor":
            effective = CellClass.EPITHELIAL  # the refinement rule will fire
        counts[effective][region] += 1
        contour = _square_contour(x, y, contour_side) if contour_side else None
        records.append(
            CellRecord(id=next_id, x=x, y=y, cell_class=cls, contour=contour)
        )
        next_id += 1

    for plant in config.planted:
        if plant.count == 0:
            continue
        if plant.region == "tumor":
            pool = tumor_cells_by_blob[plant.blob] if plant.blob is not None else all_tumor
        else:
            pool = region_cells[plant.region]
        if len(pool) == 0:
            raise GenerationError(
                f"region {plant.region!r} has no mask cells for {plant.count} nuclei"
            )
        for x, y in _sample_in_cells(rng, pool, plant.count, meta):
            place(plant.cell_class, plant.region, x, y)

    pair_distances: dict[tuple[CellClass, CellClass], list[float]] = {}
    for pair in config.distance_pairs:
        sx, sy = float(pair.x), float(pair.y)
        tx, ty = sx + float(pair.dx), sy + float(pair.dy)
        for px, py in ((sx, sy), (tx, ty)):
            col = int(px // meta.mask_downsample)
            row = int(py // meta.mask_downsample)
            if not (0 <= px < meta.width_px and 0 <= py < meta.height_px) or int(
                raster[row, col]
            ) != blob_labels[pair.blob]:
                raise GenerationError(
                    f"distance pair point ({px}, {py}) is not inside blob {pair.blob}"
                )
        place(pair.source, "tumor", sx, sy)
        place(pair.target, "tumor", tx, ty)
        # the exact float offsets the engine will see
        ddx = tx - sx
        ddy = ty - sy
        pair_distances.setdefault((pair.source, pair.target), []).append(
            math.sqrt(ddx * ddx + ddy * ddy)
        )

    slide = align_slide(meta, records, mask, config.vicinity_um)
    _verify_tags(slide, counts)

    truth = _ground_truth(slide, counts, pair_distances, len(instances))
    return SynthResult(meta=meta, cells=tuple(records), mask=mask, truth=truth)


def _verify_tags(slide, counts) -> None:
    got: dict[CellClass, dict[str, int]] = {
        cls: dict.fromkeys(_REGIONS, 0) for cls in CellClass
    }
    tag_token = {
        RegionTag.TUMOR: "tumor",
        RegionTag.VICINITY: "vicinity",
        RegionTag.OUTSIDE: "outside",
    }
    for rec, tag in zip(slide.cells, slide.cell_region_tags):
        got[rec.cell_class][tag_token[tag]] += 1
    if got != counts:
        raise GenerationError("internal: tagging disagrees with planted placement")


def _ground_truth(slide, counts, pair_distances, n_instances: int) -> GroundTruth:
    from itertools import combinations

    from .distance import default_distance_specs
    from .features import REGION_TOKENS, class_ratio

    areas = region_areas_um2(slide)
    area_mm2 = {
        "tumor": areas[RegionTag.TUMOR] / 1e6,
        "vicinity": areas[RegionTag.VICINITY] / 1e6,
        "wsi": sum(areas.values()) / 1e6,
    }

    def count_in(cls: CellClass, region: str) -> int:
        if region == "wsi":
            return sum(counts[cls].values())
        return counts[cls][region]

    expected: dict[str, Optional[float]] = {}
    for region in REGION_TOKENS:
        total = sum(count_in(cls, region) for cls in CellClass)
        for cls in CellClass:
            expected[f"pct_{cls.value}_{region}"] = (
                None if total == 0 else count_in(cls, region) / total
            )
        for cls in CellClass:
            mm2 = area_mm2[region]
            expected[f"density_{cls.value}_{region}"] = (
                None if mm2 <= 0 else count_in(cls, region) / mm2
            )
        for a, b in combinations(CellClass, 2):
            expected[f"ratio_{a.value}_{b.value}_{region}"] = class_ratio(
                count_in(a, region), count_in(b, region)
            )

    for spec in default_distance_specs():
        key = (spec.source, spec.target)
        if key in pair_distances:
            dists = pair_distances[key]
            total = 0.0
            for d in dists:  # placement order == ascending source id
                total += d
            expected[spec.name] = total / len(dists)
        elif counts[spec.source]["tumor"] == 0 or counts[spec.target]["tumor"] == 0:
            # no sources at all, or every source is in a target-free tumor
            expected[spec.name] = None

    return GroundTruth(
        planted_counts={cls.value: dict(counts[cls]) for cls in CellClass},
        expected_features=expected,
        n_tumor_instances=n_instances,
    )


# ---------------------------------------------------------------------------
# config and truth files


def parse_config(data: bytes) -> SynthConfig:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed synth config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("synth config must be a JSON object")
    try:
        blobs = tuple(
            EllipseSpec(float(b["cx"]), float(b["cy"]), float(b["rx"]), float(b["ry"]))
            for b in doc.get("blobs", [])
        )
        planted = tuple(
            PlantedCount(
                cell_class=_token_class(p["class"]),
                region=str(p["region"]),
                count=int(p["count"]),
                blob=None if p.get("blob") is None else int(p["blob"]),
            )
            for p in doc.get("planted", [])
        )
        pairs = tuple(
            DistancePair(
                source=_token_class(p["source"]),
                target=_token_class(p["target"]),
                blob=int(p["blob"]),
                x=float(p["x"]),
                y=float(p["y"]),
                dx=float(p["dx"]),
                dy=float(p["dy"]),
            )
            for p in doc.get("distance_pairs", [])
        )
        side = doc.get("contour_side")
        return SynthConfig(
            width_px=int(doc["width_px"]),
            height_px=int(doc["height_px"]),
            microns_per_pixel=float(doc["microns_per_pixel"]),
            mask_downsample=int(doc.get("mask_downsample", 32)),
            blobs=blobs,
            planted=planted,
            distance_pairs=pairs,
            contour_side=None if side is None else float(side),
            vicinity_um=float(doc.get("vicinity_um", DEFAULT_VICINITY_UM)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad synth config: {exc}") from exc


def _token_class(token) -> CellClass:
    cls = _CLASS_BY_TOKEN.get(str(token))
    if cls is None:
        raise ParseError(f"unknown cell class {token!r}")
    return cls


def truth_to_json_bytes(truth: GroundTruth) -> bytes:
    from .io import canonical_json_bytes

    return canonical_json_bytes(
        {
            "planted_counts": truth.planted_counts,
            "expected_features": truth.expected_features,
            "n_tumor_instances": truth.n_tumor_instances,
        }
    )


def write_fixture(result: SynthResult, out_dir, mask_format: str = "pgm") -> dict:
    """Write cells.json, mask, meta.json, and truth.json; returns the paths."""
    import pathlib

    from .io import serialize_cells, write_mask, write_meta

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mask_name = "mask.pgm" if mask_format == "pgm" else "mask.rle"
    paths = {
        "cells": out / "cells.json",
        "mask": out / mask_name,
        "meta": out / "meta.json",
        "truth": out / "truth.json",
    }
    paths["cells"].write_bytes(serialize_cells(result.cells))
    paths["mask"].write_bytes(write_mask(result.mask, mask_format))
    paths["meta"].write_bytes(write_meta(result.meta))
    paths["truth"].write_bytes(truth_to_json_bytes(result.truth))
    return {k: str(v) for k, v in paths.items()}
