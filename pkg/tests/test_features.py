import math
import statistics

import numpy as np
import pytest

from histomap.errors import AssemblyError, SchemaError
from histomap.features import (
    FeatureRegistry,
    FeatureVector,
    class_densities,
    class_percentages,
    class_ratio,
    extract_features,
    morphology_stats,
    parse_feature_name,
)
from histomap.io import write_feature_vector
from histomap.model import CellClass, CellRecord, RegionTag, SlideMeta, TumorMask
from histomap.regions import align_slide

from conftest import random_slide, square_contour


class TestClassRatio:
    def test_worked_example(self):
        assert abs(class_ratio(100, 10) - 2.001 / 1.001) < 1e-12

    def test_equal_counts_give_one(self):
        for k in (1, 10, 1_000_000):
            assert class_ratio(k, k) == 1.0

    def test_denominator_one_is_finite(self):
        v = class_ratio(50, 1)
        assert math.isfinite(v)
        assert abs(v - (math.log10(50) + 1e-3) / 1e-3) < 1e-9

    def test_zero_count_is_null(self):
        assert class_ratio(0, 5) is None
        assert class_ratio(5, 0) is None
        assert class_ratio(0, 0) is None


class TestFeatureNameGrammar:
    @pytest.mark.parametrize(
        "name",
        [
            "pct_lymphocyte_tumor",
            "repartition_tumor_wsi",
            "density_epithelial_vicinity",
            "ratio_granulocyte_plasma_wsi",
            "dist_lymphocyte_tumor",
            "morph_area_mean_stromal_tumor",
            "morph_circularity_std_plasma_wsi",
        ],
    )
    def test_round_trip(self, name):
        assert parse_feature_name(name).name == name

    @pytest.mark.parametrize(
        "name",
        [
            "pct_unknown_tumor",
            "pct_lymphocyte_nowhere",
            "ratio_lymphocyte_lymphocyte_tumor",
            "dist_lymphocyte_lymphocyte",
            "morph_perimeter_mean_stromal_tumor",
            "bogus_lymphocyte_tumor",
        ],
    )
    def test_rejects_bad_names(self, name):
        with pytest.raises(SchemaError):
            parse_feature_name(name)


class TestFeatureRegistry:
    def test_default_is_159_features_with_schema_hm_fv_1(self):
        reg = FeatureRegistry.default()
        assert reg.schema == "hm-fv-1"
        assert len(reg.names) == 159
        # block order: pct, density, ratio, dist, morph
        kinds = [n.split("_")[0] for n in reg.names]
        blocks = [kinds[0]]
        for k in kinds[1:]:
            if k != blocks[-1]:
                blocks.append(k)
        assert blocks == ["pct", "density", "ratio", "dist", "morph"]

    def test_analysis_subset_drops_morphology(self):
        reg = FeatureRegistry.default()
        assert len(reg.analysis_names) == 87
        assert not any(n.startswith("morph_") for n in reg.analysis_names)

    def test_duplicate_names_rejected(self):
        with pytest.raises(SchemaError):
            FeatureRegistry.from_names(["pct_tumor_tumor", "pct_tumor_tumor"])

    def test_custom_registry_gets_content_schema(self):
        reg = FeatureRegistry.from_names(["pct_tumor_tumor", "dist_lymphocyte_tumor"])
        assert reg.schema.startswith("hm-fv-custom-")
        again = FeatureRegistry.from_names(["pct_tumor_tumor", "dist_lymphocyte_tumor"])
        assert reg.schema == again.schema

    def test_json_round_trip(self):
        reg = FeatureRegistry.default()
        back = FeatureRegistry.from_json_bytes(reg.to_json_bytes())
        assert back.names == reg.names
        assert back.schema == reg.schema


def _counted_slide():
    """3 lymphocytes and 1 tumor cell inside one tumor block, nothing else."""
    grid = np.zeros((8, 8), dtype=bool)
    grid[2:6, 2:6] = True
    meta = SlideMeta(8 * 16, 8 * 16, 0.5, 16)
    mask = TumorMask(8, 8, grid)
    L, T = CellClass.LYMPHOCYTE, CellClass.TUMOR
    cells = [
        CellRecord(id=1, x=40.0, y=40.0, cell_class=L),
        CellRecord(id=2, x=50.0, y=50.0, cell_class=L),
        CellRecord(id=3, x=60.0, y=60.0, cell_class=L),
        CellRecord(id=4, x=70.0, y=70.0, cell_class=T),
    ]
    return align_slide(meta, cells, mask, 100.0)


class TestClassPercentages:
    def test_worked_example(self):
        slide = _counted_slide()
        pct = class_percentages(slide, "tumor")
        assert pct[CellClass.LYMPHOCYTE] == 0.75
        assert pct[CellClass.TUMOR] == 0.25
        assert pct[CellClass.PLASMA] == 0.0

    def test_empty_region_is_all_none(self):
        slide = _counted_slide()
        pct = class_percentages(slide, "vicinity")
        assert all(v is None for v in pct.values())

    def test_fractions_sum_to_one(self):
        for seed in range(8):
            slide = random_slide(seed)
            for region in ("tumor", "vicinity", "wsi"):
                pct = class_percentages(slide, region)
                vals = [v for v in pct.values() if v is not None]
                if vals:
                    assert abs(sum(vals) - 1.0) <= 1e-9


class TestClassDensities:
    def test_cells_per_mm2(self):
        slide = _counted_slide()
        dens = class_densities(slide, "tumor")
        # tumor area: 16 mask cells of (0.5 * 16)^2 um^2 = 1024 um^2
        area_mm2 = 16 * 64.0 / 1e6
        assert math.isclose(dens[CellClass.LYMPHOCYTE], 3 / area_mm2, rel_tol=1e-12)

    def test_scale_covariance(self):
        # halving mpp quarters areas: densities scale by exactly 4
        slide_a = random_slide(11, mpp=0.5)
        slide_b = random_slide(11, mpp=0.25)
        da = class_densities(slide_a, "tumor")
        db = class_densities(slide_b, "tumor")
        for cls in CellClass:
            if da[cls] is None:
                assert db[cls] is None
            else:
                assert math.isclose(db[cls], 4.0 * da[cls], rel_tol=1e-12)


class TestMorphologyStats:
    def test_two_unit_squares(self):
        # mpp 1.0 so px^2 and um^2 coincide and the fixture stays exact
        grid = np.ones((4, 4), dtype=bool)
        meta = SlideMeta(4 * 16, 4 * 16, 1.0, 16)
        mask = TumorMask(4, 4, grid)
        T = CellClass.TUMOR
        cells = [
            CellRecord(id=1, x=10.0, y=10.0, cell_class=T, contour=square_contour(10, 10, 1.0)),
            CellRecord(id=2, x=30.0, y=30.0, cell_class=T, contour=square_contour(30, 30, 1.0)),
            CellRecord(id=3, x=50.0, y=50.0, cell_class=T),  # no contour: excluded
        ]
        slide = align_slide(meta, cells, mask, 100.0)
        stats = morphology_stats(slide, "tumor", T)
        assert stats["area_mean"] == 1.0
        assert stats["area_std"] == 0.0
        assert math.isclose(stats["circularity_mean"], math.pi / 4, rel_tol=1e-12)
        assert stats["circularity_std"] == 0.0

    def test_area_reported_in_um2(self):
        # one 2x2 px square at mpp 0.25 is 4 * 0.0625 = 0.25 um^2
        grid = np.ones((4, 4), dtype=bool)
        meta = SlideMeta(4 * 16, 4 * 16, 0.25, 16)
        cells = [
            CellRecord(
                id=1, x=10.0, y=10.0, cell_class=CellClass.TUMOR,
                contour=square_contour(10, 10, 2.0),
            )
        ]
        slide = align_slide(meta, cells, TumorMask(4, 4, grid), 100.0)
        stats = morphology_stats(slide, "tumor", CellClass.TUMOR)
        assert stats["area_mean"] == 0.25

    def test_single_cell_std_zero(self):
        grid = np.ones((4, 4), dtype=bool)
        meta = SlideMeta(4 * 16, 4 * 16, 0.25, 16)
        cells = [
            CellRecord(
                id=1, x=10.0, y=10.0, cell_class=CellClass.PLASMA,
                contour=square_contour(10, 10, 2.0),
            )
        ]
        slide = align_slide(meta, cells, TumorMask(4, 4, grid), 100.0)
        stats = morphology_stats(slide, "tumor", CellClass.PLASMA)
        assert stats["area_std"] == 0.0

    def test_no_contoured_cells_is_null(self):
        slide = _counted_slide()
        stats = morphology_stats(slide, "tumor", CellClass.LYMPHOCYTE)
        assert all(stats[k] is None for k in ("area_mean", "area_std",
                                              "circularity_mean", "circularity_std"))

    def test_matches_statistics_oracle(self):
        slide = random_slide(21, with_contours=True)
        from histomap.model import morphology

        um2 = slide.meta.microns_per_pixel ** 2
        for cls in CellClass:
            stats = morphology_stats(slide, "tumor", cls)
            areas = [
                morphology(rec.contour)[0] * um2
                for rec, tag in zip(slide.cells, slide.cell_region_tags)
                if tag is RegionTag.TUMOR and rec.cell_class is cls and rec.contour
            ]
            if not areas:
                assert stats["area_mean"] is None
                continue
            assert math.isclose(stats["area_mean"], statistics.fmean(areas), rel_tol=1e-12)
            assert math.isclose(
                stats["area_std"], statistics.pstdev(areas), rel_tol=1e-12, abs_tol=1e-15
            )


class TestExtractFeatures:
    def test_registry_keys_in_order(self):
        slide = _counted_slide()
        reg = FeatureRegistry.from_names(
            ["pct_lymphocyte_tumor", "density_tumor_wsi", "ratio_lymphocyte_tumor_tumor"]
        )
        fv = extract_features(slide, reg)
        assert tuple(fv.values.keys()) == reg.names
        assert fv.values["pct_lymphocyte_tumor"] == 0.75

    def test_no_tumor_slide_nulls_tumor_features(self):
        meta = SlideMeta(64, 64, 0.25, 16)
        mask = TumorMask(4, 4, np.zeros((4, 4), bool))
        cells = [CellRecord(id=1, x=5.0, y=5.0, cell_class=CellClass.STROMAL)]
        slide = align_slide(meta, cells, mask, 100.0)
        fv = extract_features(slide, FeatureRegistry.default())
        assert fv.values["pct_stromal_tumor"] is None
        assert fv.values["dist_lymphocyte_tumor"] is None
        assert fv.values["pct_stromal_wsi"] == 1.0

    def test_counts_only_dependence(self):
        # permuting cell positions within a region leaves pct/ratio unchanged
        slide = random_slide(31)
        reg = FeatureRegistry.from_names(
            [n for n in FeatureRegistry.default().names if n.startswith(("pct_", "ratio_"))]
        )
        base = extract_features(slide, reg)
        rng = np.random.default_rng(0)
        by_tag = {}
        for rec, tag in zip(slide.cells, slide.cell_region_tags):
            by_tag.setdefault(tag, []).append(rec)
        remapped = []
        for tag, recs in by_tag.items():
            coords = [(r.x, r.y) for r in recs]
            perm = rng.permutation(len(coords))
            for rec, j in zip(recs, perm):
                x, y = coords[j]
                remapped.append(
                    CellRecord(id=rec.id, x=x, y=y, cell_class=rec.cell_class)
                )
        slide2 = align_slide(slide.meta, sorted(remapped, key=lambda r: r.id), slide.tumor_mask, 200.0)
        again = extract_features(slide2, reg)
        assert again.values == base.values

    def test_full_default_vector_under_20kb(self):
        slide = random_slide(2, with_contours=True)
        fv = extract_features(slide, FeatureRegistry.default())
        data = write_feature_vector(fv)
        assert len(data) < 20_000

    def test_pct_invariant_violation_raises(self):
        # a vector whose pct family breaks the sum-to-1 rule is refused
        slide = _counted_slide()
        reg = FeatureRegistry.default()
        fv = extract_features(slide, reg)
        bad = dict(fv.values)
        bad["pct_lymphocyte_tumor"] = 0.9
        from histomap.features import REGION_TOKENS, _region_members, _validate_vector

        region_cells = {r: _region_members(slide, r) for r in REGION_TOKENS}
        with pytest.raises(AssemblyError):
            _validate_vector(FeatureVector(schema=reg.schema, values=bad), reg, region_cells)
