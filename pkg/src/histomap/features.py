"""Feature registry and slide-level feature assembly.

A registry is an ordered list of feature names; every name is fully
self-describing and parses back into its definition, so a registry file is
a JSON array of names (objects with a ``"name"`` key are also accepted).
The default registry covers class percentages, densities, pairwise
log-count ratios, rectangle-search distances, and nuclear morphology
statistics over three regions.

Name grammar (class and region tokens contain no underscores):

    pct_<class>_<region>            region composition: class count / all
                                    cells in the region, a fraction in [0,1]
    repartition_<class>_<region>    where a class lives: region count /
                                    slide-wide count of that class
    density_<class>_<region>        cells per mm^2 of region area
    ratio_<classA>_<classB>_<region>  smoothed log10 count ratio
    dist_<classA>_<classB>          mean rectangle-search distance
    morph_<area|circularity>_<mean|std>_<class>_<region>

Regions are ``tumor``, ``vicinity``, ``wsi`` (the whole slide). Features
whose inputs are absent (empty region, zero count in a ratio, no contoured
nuclei, no eligible distance sources) are null, never NaN. Within any
non-empty region the six pct values sum to 1; assembly asserts this.

Morphology features exist but are not part of the analysis subset
(:meth:`FeatureRegistry.analysis_names`) handed to feature selection.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

from .distance import (
    DEFAULT_RECTANGLE_FACTOR,
    DistanceResult,
    DistanceSpec,
    compute_distance_results,
    default_distance_specs,
)
from .errors import AssemblyError, ParseError, SchemaError
from .model import AlignedSlide, CellClass, RegionTag, morphology
from .regions import region_areas_um2

DEFAULT_SCHEMA = "hm-fv-1"
LOG_RATIO_EPSILON = 1e-3

REGION_TOKENS = ("tumor", "vicinity", "wsi")
MORPH_STATS = ("area_mean", "area_std", "circularity_mean", "circularity_std")

_CLASS_BY_TOKEN = {cls.value: cls for cls in CellClass}


@dataclass(frozen=True)
class FeatureDef:
    name: str
    kind: str
    region: Optional[str] = None
    class_a: Optional[CellClass] = None
    class_b: Optional[CellClass] = None
    stat: Optional[str] = None


def parse_feature_name(name: str) -> FeatureDef:
    parts = name.split("_")
    kind = parts[0]
    if kind in ("pct", "repartition", "density") and len(parts) == 3:
        return FeatureDef(
            name, kind, region=_region(name, parts[2]), class_a=_cls(name, parts[1])
        )
    if kind == "ratio" and len(parts) == 4:
        class_a, class_b = _cls(name, parts[1]), _cls(name, parts[2])
        if class_a is class_b:
            raise SchemaError(f"feature {name!r}: ratio classes must differ")
        return FeatureDef(
            name, kind, region=_region(name, parts[3]), class_a=class_a, class_b=class_b
        )
    if kind == "dist" and len(parts) == 3:
        class_a, class_b = _cls(name, parts[1]), _cls(name, parts[2])
        if class_a is class_b:
            raise SchemaError(f"feature {name!r}: distance classes must differ")
        return FeatureDef(name, kind, class_a=class_a, class_b=class_b)
    if (
        kind == "morph"
        and len(parts) == 5
        and parts[1] in ("area", "circularity")
        and parts[2] in ("mean", "std")
    ):
        return FeatureDef(
            name,
            kind,
            region=_region(name, parts[4]),
            class_a=_cls(name, parts[3]),
            stat=f"{parts[1]}_{parts[2]}",
        )
    raise SchemaError(f"unrecognized feature name {name!r}")


def _cls(name: str, token: str) -> CellClass:
    try:
        return _CLASS_BY_TOKEN[token]
    except KeyError:
        raise SchemaError(f"feature {name!r}: unknown class {token!r}") from None


def _region(name: str, token: str) -> str:
    if token not in REGION_TOKENS:
        raise SchemaError(f"feature {name!r}: unknown region {token!r}")
    return token


@dataclass(frozen=True)
class FeatureRegistry:
    """Ordered, validated feature list plus its schema identifier."""

    schema: str
    features: tuple[FeatureDef, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(fd.name for fd in self.features)

    @property
    def analysis_names(self) -> tuple[str, ...]:
        """The selection-facing subset: everything except morphology."""
        return tuple(fd.name for fd in self.features if fd.kind != "morph")

    @classmethod
    def default(cls) -> "FeatureRegistry":
        names: list[str] = []
        classes = list(CellClass)
        for region in REGION_TOKENS:
            names.extend(f"pct_{c.value}_{region}" for c in classes)
        for region in REGION_TOKENS:
            names.extend(f"density_{c.value}_{region}" for c in classes)
        for region in REGION_TOKENS:
            names.extend(
                f"ratio_{a.value}_{b.value}_{region}" for a, b in combinations(classes, 2)
            )
        names.extend(spec.name for spec in default_distance_specs())
        for region in REGION_TOKENS:
            for c in classes:
                names.extend(f"morph_{stat}_{c.value}_{region}" for stat in MORPH_STATS)
        return cls.from_names(names, schema=DEFAULT_SCHEMA)

    @classmethod
    def from_names(cls, names, schema: Optional[str] = None) -> "FeatureRegistry":
        names = list(names)
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate feature names: {dupes}")
        defs = tuple(parse_feature_name(n) for n in names)
        if schema is None:
            schema = _derive_schema(names)
        return cls(schema=schema, features=defs)

    @classmethod
    def from_json_bytes(cls, data: bytes) -> "FeatureRegistry":
        """Registry file: JSON array of names, or of objects with "name"."""
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"malformed registry JSON: {exc}") from exc
        if not isinstance(doc, list):
            raise ParseError("registry must be a JSON array")
        names = []
        for entry in doc:
            if isinstance(entry, str):
                names.append(entry)
            elif isinstance(entry, dict) and isinstance(entry.get("name"), str):
                names.append(entry["name"])
            else:
                raise ParseError(f"registry entry {entry!r} has no feature name")
        return cls.from_names(names)

    def to_json_bytes(self) -> bytes:
        from .io import canonical_json_bytes

        return canonical_json_bytes(list(self.names))


def _derive_schema(names: list[str]) -> str:
    if not names or tuple(names) == FeatureRegistry.default().names:
        return DEFAULT_SCHEMA
    digest = hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:12]
    return f"hm-fv-custom-{digest}"


@dataclass(frozen=True)
class FeatureVector:
    """Schema identifier plus registry-ordered name -> value (None = null)."""

    schema: str
    values: dict


def _region_members(slide: AlignedSlide, region: str):
    if region == "wsi":
        return list(slide.cells)
    want = RegionTag.TUMOR if region == "tumor" else RegionTag.VICINITY
    return [rec for rec, tag in zip(slide.cells, slide.cell_region_tags) if tag is want]


def class_percentages(slide: AlignedSlide, region: str) -> dict[CellClass, Optional[float]]:
    """Fraction of the region's cells per class; all None when region empty."""
    members = _region_members(slide, region)
    if not members:
        return dict.fromkeys(CellClass)
    total = len(members)
    return {
        cls: sum(1 for rec in members if rec.cell_class is cls) / total
        for cls in CellClass
    }


def class_densities(slide: AlignedSlide, region: str) -> dict[CellClass, Optional[float]]:
    """Cells per mm^2 of region area; all None when the area is zero."""
    mm2 = _region_area_mm2(slide)[region]
    if mm2 <= 0:
        return dict.fromkeys(CellClass)
    members = _region_members(slide, region)
    return {
        cls: sum(1 for rec in members if rec.cell_class is cls) / mm2
        for cls in CellClass
    }


def class_ratio(n_a: int, n_b: int) -> Optional[float]:
    """Smoothed log10 ratio of two counts; None when either count is zero."""
    if n_a < 0 or n_b < 0:
        raise AssemblyError("counts must be non-negative")
    if n_a == 0 or n_b == 0:
        return None
    return (math.log10(n_a) + LOG_RATIO_EPSILON) / (math.log10(n_b) + LOG_RATIO_EPSILON)


def _region_area_mm2(slide: AlignedSlide) -> dict[str, float]:
    areas = region_areas_um2(slide)
    return {
        "tumor": areas[RegionTag.TUMOR] / 1e6,
        "vicinity": areas[RegionTag.VICINITY] / 1e6,
        "wsi": sum(areas.values()) / 1e6,
    }


def morphology_stats(
    slide: AlignedSlide, region: str, cls: CellClass
) -> dict[str, Optional[float]]:
    """Mean and population std of nuclear area (um^2) and circularity.

    Only contoured cells participate; none present means all-None. A single
    cell gives std 0 by the population (N-denominator) convention.
    """
    um2 = slide.meta.microns_per_pixel ** 2
    areas: list[float] = []
    circs: list[float] = []
    for rec in _region_members(slide, region):
        if rec.cell_class is cls and rec.contour is not None:
            area_px2, circ = morphology(rec.contour)
            areas.append(area_px2 * um2)
            circs.append(circ)
    if not areas:
        return dict.fromkeys(MORPH_STATS)
    return {
        "area_mean": statistics.fmean(areas),
        "area_std": statistics.pstdev(areas),
        "circularity_mean": statistics.fmean(circs),
        "circularity_std": statistics.pstdev(circs),
    }


def extract_features(
    slide: AlignedSlide,
    registry: Optional[FeatureRegistry] = None,
    *,
    rectangle_factor: float = DEFAULT_RECTANGLE_FACTOR,
    distances_in_um: bool = False,
    distance_results: Optional[list[DistanceResult]] = None,
) -> FeatureVector:
    """Assemble the slide's feature vector in registry order.

    Distances come out in full-resolution pixels unless ``distances_in_um``.
    ``distance_results`` lets a caller inject precomputed rectangle-search
    results (the parallel front end does); registry pairs not covered there
    are computed serially here.
    """
    if registry is None:
        registry = FeatureRegistry.default()

    region_cells = {region: _region_members(slide, region) for region in REGION_TOKENS}
    counts: dict[tuple[str, CellClass], int] = {}
    for region, members in region_cells.items():
        for cls in CellClass:
            counts[(region, cls)] = sum(1 for rec in members if rec.cell_class is cls)

    area_mm2 = _region_area_mm2(slide)

    dist_lookup: dict[tuple[CellClass, CellClass], Optional[float]] = {}
    for result in distance_results or ():
        dist_lookup[(result.source, result.target)] = result.mean_distance
    missing = [
        DistanceSpec(fd.class_a, fd.class_b, rectangle_factor)
        for fd in registry.features
        if fd.kind == "dist" and (fd.class_a, fd.class_b) not in dist_lookup
    ]
    for result in compute_distance_results(slide, missing):
        dist_lookup[(result.source, result.target)] = result.mean_distance

    morph_cache: dict[tuple[str, CellClass], dict[str, Optional[float]]] = {}

    values: dict[str, Optional[float]] = {}
    for fd in registry.features:
        if fd.kind == "pct":
            total = len(region_cells[fd.region])
            values[fd.name] = None if total == 0 else counts[(fd.region, fd.class_a)] / total
        elif fd.kind == "repartition":
            slide_total = counts[("wsi", fd.class_a)]
            values[fd.name] = (
                None if slide_total == 0 else counts[(fd.region, fd.class_a)] / slide_total
            )
        elif fd.kind == "density":
            mm2 = area_mm2[fd.region]
            values[fd.name] = None if mm2 <= 0 else counts[(fd.region, fd.class_a)] / mm2
        elif fd.kind == "ratio":
            values[fd.name] = class_ratio(
                counts[(fd.region, fd.class_a)], counts[(fd.region, fd.class_b)]
            )
        elif fd.kind == "dist":
            d = dist_lookup[(fd.class_a, fd.class_b)]
            if d is not None and distances_in_um:
                d = d * slide.meta.microns_per_pixel
            values[fd.name] = d
        else:  # morph; parse_feature_name admits no other kind
            key = (fd.region, fd.class_a)
            if key not in morph_cache:
                morph_cache[key] = morphology_stats(slide, fd.region, fd.class_a)
            values[fd.name] = morph_cache[key][fd.stat]

    vector = FeatureVector(schema=registry.schema, values=values)
    _validate_vector(vector, registry, region_cells)
    return vector


def _validate_vector(vector: FeatureVector, registry: FeatureRegistry, region_cells) -> None:
    if tuple(vector.values.keys()) != registry.names:
        raise AssemblyError("vector keys do not match the registry")
    for value in vector.values.values():
        if value is not None and (math.isnan(value) or math.isinf(value)):
            raise AssemblyError("vector contains a non-finite value")
    # whenever a region's full six-class pct family is present and the
    # region is non-empty, composition must sum to one
    for region in REGION_TOKENS:
        family = [f"pct_{cls.value}_{region}" for cls in CellClass]
        if all(name in vector.values for name in family) and region_cells[region]:
            total = sum(vector.values[name] for name in family)
            if abs(total - 1.0) > 1e-9:
                raise AssemblyError(
                    f"pct features for region {region!r} sum to {total!r}, not 1"
                )
