import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histomap.errors import ParseError, SchemaError, SerializationError
from histomap.io import (
    canonical_json_bytes,
    format_number,
    parse_cells,
    parse_feature_vector,
    parse_mask,
    parse_pgm,
    read_meta,
    serialize_cells,
    write_feature_vector,
    write_mask,
    write_meta,
    write_pgm,
)
from histomap.model import CellClass, CellRecord, SlideMeta, TumorMask


class TestFormatNumber:
    def test_zero_is_bare_zero(self):
        assert format_number(0.0) == "0"
        assert format_number(-0.0) == "0"
        assert format_number(0) == "0"

    def test_integers_have_no_point(self):
        assert format_number(42) == "42"
        assert format_number(-7) == "-7"

    def test_seventeen_digits_round_trip(self):
        for x in (0.1, 1 / 3, math.pi, 2.001 / 1.001, 1e-300, 1.5e300):
            assert float(format_number(x)) == x

    def test_non_finite_rejected(self):
        for bad in (math.nan, math.inf, -math.inf):
            with pytest.raises(SerializationError):
                format_number(bad)

    def test_bool_rejected(self):
        with pytest.raises(SerializationError):
            format_number(True)

    @given(st.floats(allow_nan=False, allow_infinity=False))
    @settings(max_examples=300)
    def test_round_trip_property(self, x):
        assert float(format_number(x)) == x


class TestCanonicalJson:
    def test_no_whitespace_and_insertion_order(self):
        data = canonical_json_bytes({"b": 1, "a": [1.5, None, "x"]})
        assert data == b'{"b":1,"a":[1.5,null,"x"]}'

    def test_unicode_preserved(self):
        assert canonical_json_bytes({"k": "µm"}) == '{"k":"µm"}'.encode("utf-8")

    def test_unserializable_type_rejected(self):
        with pytest.raises(SerializationError):
            canonical_json_bytes({"k": object()})


class TestParseCells:
    def test_single_lymphocyte(self):
        recs = parse_cells(b'{"1":{"centroid":[10,20],"type":2}}')
        assert len(recs) == 1
        assert recs[0].id == 1
        assert (recs[0].x, recs[0].y) == (10.0, 20.0)
        assert recs[0].cell_class is CellClass.LYMPHOCYTE

    def test_unknown_code_names_the_record(self):
        with pytest.raises(SchemaError) as err:
            parse_cells(b'{"1":{"centroid":[10,20],"type":7}}')
        assert err.value.record_id == 1

    def test_output_sorted_by_id(self):
        recs = parse_cells(
            b'{"5":{"centroid":[1,1],"type":1},"2":{"centroid":[2,2],"type":3}}'
        )
        assert [r.id for r in recs] == [2, 5]

    def test_malformed_json_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_cells(b"{nope")

    def test_non_integer_id_rejected(self):
        with pytest.raises(ParseError):
            parse_cells(b'{"abc":{"centroid":[1,1],"type":1}}')

    def test_type_prob_out_of_range(self):
        with pytest.raises(ParseError):
            parse_cells(b'{"1":{"centroid":[1,1],"type":1,"type_prob":1.5}}')

    def test_round_trip_with_contours(self):
        cells = [
            CellRecord(
                id=3,
                x=1.5,
                y=2.5,
                cell_class=CellClass.TUMOR,
                contour=((0.0, 0.0), (3.0, 0.0), (3.0, 3.0)),
                class_confidence=0.75,
            ),
            CellRecord(id=1, x=9.0, y=8.0, cell_class=CellClass.STROMAL),
        ]
        data = serialize_cells(cells)
        back = parse_cells(data)
        assert [r.id for r in back] == [1, 3]
        assert back[1].contour == cells[0].contour
        assert back[1].class_confidence == 0.75
        assert serialize_cells(back) == data

    def test_epithelial_has_no_wire_code(self):
        cell = CellRecord(id=1, x=0.0, y=0.0, cell_class=CellClass.EPITHELIAL)
        with pytest.raises(SchemaError):
            serialize_cells([cell])

    def test_fuzzed_truncation_gives_structured_errors(self):
        doc = serialize_cells(
            [CellRecord(id=i, x=float(i), y=float(i), cell_class=CellClass.PLASMA) for i in range(1, 30)]
        )
        for cut in range(0, len(doc), 17):
            try:
                parse_cells(doc[:cut])
            except (ParseError, SchemaError):
                pass


class TestPgm:
    def test_all_255_is_all_tumor(self):
        data = b"P5\n4 4\n255\n" + b"\xff" * 16
        mask = parse_mask(data, "pgm")
        assert mask.bitmap.all()
        assert (mask.width, mask.height) == (4, 4)

    def test_comments_in_header(self):
        data = b"P5\n# a comment\n2 2\n255\n" + bytes([0, 255, 0, 255])
        arr = parse_pgm(data)
        assert arr.tolist() == [[0, 255], [0, 255]]

    def test_sixteen_bit_big_endian(self):
        payload = np.array([[1, 300], [0, 65535]], dtype=np.uint16)
        data = write_pgm(payload, maxval=65535)
        back = parse_pgm(data)
        assert back.dtype == np.uint16
        assert (back == payload).all()

    def test_truncated_raster(self):
        with pytest.raises(ParseError):
            parse_pgm(b"P5\n4 4\n255\n" + b"\x00" * 15)

    def test_not_a_pgm(self):
        with pytest.raises(ParseError):
            parse_pgm(b"P6\n4 4\n255\n" + b"\x00" * 48)

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        arr = (rng.random((13, 7)) < 0.4).astype(np.uint8) * 255
        assert (parse_pgm(write_pgm(arr, maxval=255)) == arr).all()


class TestRle:
    def test_bottom_half_tumor(self):
        mask = parse_mask(b"0:8,1:8", "rle", width=4, height=4)
        assert not mask.bitmap[:2].any()
        assert mask.bitmap[2:].all()

    def test_counts_must_cover_grid(self):
        with pytest.raises(ParseError):
            parse_mask(b"0:8,1:7", "rle", width=4, height=4)

    def test_dense_rle_round_trip(self):
        rng = np.random.default_rng(3)
        grid = rng.random((9, 9)) < 0.5
        mask = TumorMask(9, 9, grid)
        rle = write_mask(mask, "rle")
        back = parse_mask(rle, "rle", width=9, height=9)
        assert (back.bitmap == grid).all()
        pgm = write_mask(mask, "pgm")
        back2 = parse_mask(pgm, "pgm")
        assert (back2.bitmap == grid).all()

    def test_malformed_pairs(self):
        with pytest.raises(ParseError):
            parse_mask(b"0-8,1-8", "rle", width=4, height=4)


class TestMeta:
    def test_round_trip(self):
        meta = SlideMeta(4096, 2048, 0.25, 16)
        back = read_meta(write_meta(meta))
        assert back == meta

    def test_vicinity_round_trip(self):
        meta = SlideMeta(4096, 2048, 0.25, 16, vicinity_um=250.0)
        back = read_meta(write_meta(meta))
        assert back.vicinity_um == 250.0

    def test_missing_field(self):
        with pytest.raises(ParseError):
            read_meta(b'{"width_px":100}')


class TestFeatureVectorIo:
    def test_empty_registry_serialization(self):
        from histomap.features import FeatureRegistry, FeatureVector

        fv = FeatureVector(schema="hm-fv-1", values={})
        assert write_feature_vector(fv) == b'{"schema":"hm-fv-1","features":{}}'

    def test_round_trip_byte_identical(self):
        from histomap.features import FeatureVector

        fv = FeatureVector(
            schema="hm-fv-1",
            values={"a": 0.1, "b": None, "c": 3.0, "d": 2.001 / 1.001},
        )
        data = write_feature_vector(fv)
        back = parse_feature_vector(data)
        assert write_feature_vector(back) == data

    def test_nan_names_the_feature(self):
        from histomap.features import FeatureVector

        fv = FeatureVector(schema="hm-fv-1", values={"bad_one": math.nan})
        with pytest.raises(SerializationError) as err:
            write_feature_vector(fv)
        assert "bad_one" in str(err.value)

    def test_wrong_top_level_keys(self):
        with pytest.raises(ParseError):
            parse_feature_vector(b'{"schema":"hm-fv-1"}')
        with pytest.raises(ParseError):
            parse_feature_vector(b'{"schema":"x","features":{},"extra":1}')
