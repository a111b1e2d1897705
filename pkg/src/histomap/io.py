"""File formats: cell JSON, mask PGM/RLE, feature-vector JSON, meta sidecar.

Every writer here is canonical: given equal in-memory values it produces
byte-identical output on every platform. Floats are rendered with 17
significant digits (``%.17g``), which round-trips any IEEE double exactly;
objects use no insignificant whitespace and a fixed key order.

Parsers are total on valid inputs and raise structured errors
(:class:`ParseError` / :class:`SchemaError`) on anything else; they never
propagate raw ``KeyError``/``ValueError`` from malformed bytes.
"""

from __future__ import annotations

import json
import math
from typing import Optional

import numpy as np

from .errors import ParseError, SchemaError, SerializationError
from .model import CellClass, CellRecord, SlideMeta, TumorMask, normalize_contour

CODE_TO_CLASS = {
    1: CellClass.GRANULOCYTE,
    2: CellClass.LYMPHOCYTE,
    3: CellClass.PLASMA,
    4: CellClass.STROMAL,
    5: CellClass.TUMOR,
}
CLASS_TO_CODE = {cls: code for code, cls in CODE_TO_CLASS.items()}


# ---------------------------------------------------------------------------
# canonical JSON


def format_number(value) -> str:
    """Canonical token for a JSON number. 17 significant digits for floats."""
    if isinstance(value, bool):
        raise SerializationError("booleans are not numbers")
    if isinstance(value, int):
        return str(value)
    if math.isnan(value) or math.isinf(value):
        raise SerializationError(f"non-finite value {value!r}")
    if value == 0.0:
        return "0"
    return format(value, ".17g")


def canonical_json_bytes(obj) -> bytes:
    """Serialize nested dict/list/str/number/None with fixed order, no whitespace."""
    out: list[str] = []
    _write_canonical(obj, out)
    return "".join(out).encode("utf-8")


def _write_canonical(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (int, float)):
        out.append(format_number(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, val) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _write_canonical(val, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, val in enumerate(obj):
            if i:
                out.append(",")
            _write_canonical(val, out)
        out.append("]")
    else:
        raise SerializationError(f"cannot serialize {type(obj).__name__}")


def _load_json(data: bytes):
    try:
        return json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# cell documents


def parse_cells(data: bytes) -> list[CellRecord]:
    """Parse a cell JSON document into CellRecords ordered by ascending id.

    The document maps nucleus id to ``{"centroid": [x, y], "type": 1..5}``
    with optional ``"contour"`` (closed polygon, >=3 vertices) and
    ``"type_prob"`` in [0, 1]. Type codes outside 1..5 raise SchemaError
    carrying the offending id; structural problems raise ParseError.
    """
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise ParseError("cell document must be a JSON object keyed by nucleus id")
    records = []
    for raw_id, entry in doc.items():
        try:
            nucleus_id = int(raw_id)
        except ValueError:
            raise ParseError(f"nucleus id {raw_id!r} is not an integer") from None
        records.append(_parse_cell_entry(nucleus_id, entry))
    records.sort(key=lambda rec: rec.id)
    return records


def _parse_cell_entry(nucleus_id: int, entry) -> CellRecord:
    if not isinstance(entry, dict):
        raise ParseError(f"nucleus {nucleus_id}: entry must be an object")
    centroid = entry.get("centroid")
    if (
        not isinstance(centroid, list)
        or len(centroid) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in centroid)
    ):
        raise ParseError(f"nucleus {nucleus_id}: centroid must be [x, y]")
    x, y = float(centroid[0]), float(centroid[1])
    if x < 0 or y < 0 or math.isnan(x) or math.isnan(y) or math.isinf(x) or math.isinf(y):
        raise ParseError(f"nucleus {nucleus_id}: centroid must be finite and non-negative")

    code = entry.get("type")
    if not isinstance(code, int) or isinstance(code, bool):
        raise ParseError(f"nucleus {nucleus_id}: type code must be an integer")
    cell_class = CODE_TO_CLASS.get(code)
    if cell_class is None:
        raise SchemaError(
            f"nucleus {nucleus_id}: unknown class code {code}", record_id=nucleus_id
        )

    contour = None
    if "contour" in entry and entry["contour"] is not None:
        raw = entry["contour"]
        if not isinstance(raw, list) or any(
            not isinstance(pt, list)
            or len(pt) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pt)
            for pt in raw
        ):
            raise ParseError(f"nucleus {nucleus_id}: contour must be [[x, y], ...]")
        try:
            contour = normalize_contour(raw)
        except Exception as exc:
            raise ParseError(f"nucleus {nucleus_id}: {exc}") from None

    confidence = None
    if "type_prob" in entry and entry["type_prob"] is not None:
        prob = entry["type_prob"]
        if (
            not isinstance(prob, (int, float))
            or isinstance(prob, bool)
            or math.isnan(prob)
            or not 0.0 <= prob <= 1.0
        ):
            raise ParseError(f"nucleus {nucleus_id}: type_prob must be in [0, 1]")
        confidence = float(prob)

    return CellRecord(
        id=nucleus_id,
        x=x,
        y=y,
        cell_class=cell_class,
        contour=contour,
        class_confidence=confidence,
    )


def serialize_cells(cells) -> bytes:
    """Canonical cell JSON, ids ascending. EPITHELIAL has no wire code."""
    doc: dict[str, dict] = {}
    for rec in sorted(cells, key=lambda r: r.id):
        code = CLASS_TO_CODE.get(rec.cell_class)
        if code is None:
            raise SchemaError(
                f"nucleus {rec.id}: class {rec.cell_class.value} has no wire code",
                record_id=rec.id,
            )
        entry: dict = {"centroid": [rec.x, rec.y], "type": code}
        if rec.contour is not None:
            entry["contour"] = [[px, py] for px, py in rec.contour]
        if rec.class_confidence is not None:
            entry["type_prob"] = rec.class_confidence
        doc[str(rec.id)] = entry
    return canonical_json_bytes(doc)


# ---------------------------------------------------------------------------
# masks


def parse_pgm(data: bytes) -> np.ndarray:
    """Parse a binary (P5) PGM into a 2-D uint8/uint16 array."""
    tokens, offset = _pgm_header_tokens(data)
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ParseError("not a P5 PGM")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ParseError("PGM header fields must be integers") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ParseError("PGM header out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    raster = data[offset : offset + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise ParseError("truncated PGM raster")
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return arr.astype(np.uint16) if maxval > 255 else arr.copy()


def _pgm_header_tokens(data: bytes) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ParseError("truncated PGM header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            start = i
            while i < len(data) and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
                i += 1
            tokens.append(data[start:i])
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ParseError("PGM header must end with single whitespace")
    return tokens, i + 1


def write_pgm(arr: np.ndarray, maxval: Optional[int] = None) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise SerializationError("PGM raster must be 2-D")
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    return header + np.ascontiguousarray(arr.astype(dtype)).tobytes()


def parse_mask(
    data: bytes,
    encoding: str = "pgm",
    *,
    width: Optional[int] = None,
    height: Optional[int] = None,
) -> TumorMask:
    """Parse a tumor mask. Any nonzero pixel is tumor.

    ``encoding`` is ``"pgm"`` (dims in-band) or ``"rle"`` (ASCII
    ``value:count`` pairs, row-major; dims must be supplied). When dims are
    given for PGM input they are cross-checked against the header.
    """
    if encoding == "pgm":
        arr = parse_pgm(data)
        if width is not None and height is not None and arr.shape != (height, width):
            raise ParseError(
                f"mask is {arr.shape[1]}x{arr.shape[0]}, expected {width}x{height}"
            )
        return TumorMask(width=arr.shape[1], height=arr.shape[0], bitmap=arr != 0)
    if encoding == "rle":
        if width is None or height is None:
            raise ParseError("RLE masks carry no dimensions; width and height are required")
        return _parse_mask_rle(data, width, height)
    raise ParseError(f"unknown mask encoding {encoding!r}")


def _parse_mask_rle(data: bytes, width: int, height: int) -> TumorMask:
    try:
        text = data.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise ParseError("RLE mask must be ASCII") from exc
    values: list[np.ndarray] = []
    total = 0
    if text:
        for pair in text.split(","):
            value_str, _, count_str = pair.partition(":")
            try:
                value, count = int(value_str), int(count_str)
            except ValueError:
                raise ParseError(f"bad RLE pair {pair!r}") from None
            if count <= 0 or value < 0:
                raise ParseError(f"bad RLE pair {pair!r}")
            values.append(np.full(count, value != 0, dtype=bool))
            total += count
    if total != width * height:
        raise ParseError(f"RLE counts sum to {total}, expected {width * height}")
    flat = np.concatenate(values) if values else np.zeros(0, dtype=bool)
    return TumorMask(width=width, height=height, bitmap=flat.reshape(height, width))


def write_mask(mask: TumorMask, encoding: str = "pgm") -> bytes:
    if encoding == "pgm":
        return write_pgm(mask.bitmap.astype(np.uint8) * 255, maxval=255)
    if encoding == "rle":
        flat = mask.bitmap.ravel().astype(np.int8)
        if flat.size == 0:
            return b""
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate(([0], change))
        ends = np.concatenate((change, [flat.size]))
        pairs = [f"{int(flat[s])}:{int(e - s)}" for s, e in zip(starts, ends)]
        return ",".join(pairs).encode("ascii")
    raise SerializationError(f"unknown mask encoding {encoding!r}")


# ---------------------------------------------------------------------------
# feature vectors


def write_feature_vector(fv) -> bytes:
    """Canonical feature-vector JSON: registry-ordered keys, 17-digit floats.

    Byte-identical across runs and platforms for identical values. NaN or
    infinite values raise SerializationError naming the feature.
    """
    out = ['{"schema":', json.dumps(fv.schema), ',"features":{']
    for i, (name, value) in enumerate(fv.values.items()):
        if i:
            out.append(",")
        out.append(json.dumps(name))
        out.append(":")
        if value is None:
            out.append("null")
        else:
            value = float(value)
            if math.isnan(value) or math.isinf(value):
                raise SerializationError(f"feature {name!r} is {value!r}")
            out.append(format_number(value))
    out.append("}}")
    return "".join(out).encode("utf-8")


def parse_feature_vector(data: bytes):
    """Parse feature-vector JSON, preserving feature order."""
    from .features import FeatureVector

    doc = _load_json(data)
    if not isinstance(doc, dict) or set(doc) != {"schema", "features"}:
        raise ParseError('feature vector must have exactly "schema" and "features" keys')
    schema = doc["schema"]
    feats = doc["features"]
    if not isinstance(schema, str) or not isinstance(feats, dict):
        raise ParseError("feature vector fields have wrong types")
    values: dict[str, Optional[float]] = {}
    for name, value in feats.items():
        if value is None:
            values[name] = None
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            values[name] = float(value)
        else:
            raise ParseError(f"feature {name!r} must be a number or null")
    return FeatureVector(schema=schema, values=values)


# ---------------------------------------------------------------------------
# meta sidecar


def read_meta(data: bytes) -> SlideMeta:
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise ParseError("meta sidecar must be a JSON object")
    vicinity = doc.get("vicinity_um")
    try:
        return SlideMeta(
            width_px=int(doc["width_px"]),
            height_px=int(doc["height_px"]),
            microns_per_pixel=float(doc["microns_per_pixel"]),
            mask_downsample=int(doc.get("mask_downsample", 32)),
            vicinity_um=None if vicinity is None else float(vicinity),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad meta sidecar: {exc}") from exc


def write_meta(meta: SlideMeta) -> bytes:
    doc = {
        "width_px": meta.width_px,
        "height_px": meta.height_px,
        "microns_per_pixel": meta.microns_per_pixel,
        "mask_downsample": meta.mask_downsample,
    }
    if meta.vicinity_um is not None:
        doc["vicinity_um"] = meta.vicinity_um
    return canonical_json_bytes(doc)
