"""Data and report file formats: LIBSVM input, JSON/CSV reports, PGM importance maps."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1


class DataFormatError(ValueError):
    pass


def parse_libsvm(text: str, dim: int) -> list[tuple[int, np.ndarray]]:
    """Parse ``<label> <idx>:<val> ...`` lines (1-based indices) into dense points."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            fl = float(fields[0])
        except ValueError:
            fl = math.nan
        if not fl.is_integer():
            raise DataFormatError(f"line {lineno}: bad label {fields[0]!r}")
        label = int(fl)
        x = np.zeros(dim)
        for tok in fields[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise DataFormatError(f"line {lineno}: expected <index>:<value>, got {tok!r}")
            try:
                j, v = int(idx), float(val)
            except ValueError:
                raise DataFormatError(f"line {lineno}: bad feature {tok!r}") from None
            if math.isnan(v):
                raise DataFormatError(f"line {lineno}: NaN value in {tok!r}")
            if not 1 <= j <= dim:
                raise DataFormatError(f"line {lineno}: feature index {j} outside 1..{dim}")
            x[j - 1] = v
        out.append((label, x))
    return out


def read_libsvm(path: str, dim: int) -> list[tuple[int, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh.read(), dim)


def normalize_binary_labels(labels: Sequence[int]) -> list[int]:
    """Map {0,1} or {-1,+1} labels to class indices 0/1."""
    out = []
    for y in labels:
        if y in (0, 1):
            out.append(int(y))
        elif y == -1:
            out.append(0)
        else:
            raise DataFormatError(f"binary label must be 0/1 or -1/+1, got {y}")
    return out


def json_float(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return json_float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dump_report(doc: dict) -> str:
    """Serialize a report; non-finite floats become the strings "inf"/"-inf"."""
    return json.dumps(_clean(doc), indent=1, allow_nan=False) + "\n"


def report_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_csv_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else json_float(v)
    return v


def importance_pixels(radii: Sequence[float], width: float = 1.0) -> np.ndarray:
    """8-bit grey levels ``round(255 * r / width)``; half-way values round up."""
    r = np.clip(np.asarray(radii, dtype=float) / width, 0.0, 1.0)
    return np.floor(255.0 * r + 0.5).astype(np.uint8)


def emit_importance_map(radii: Sequence[float], width: int, height: int, domain_width: float = 1.0) -> bytes:
    """Binary PGM (P5) image of per-feature radii laid out row-major."""
    if len(radii) != width * height:
        raise DataFormatError(f"{len(radii)} features cannot fill a {width}x{height} image")
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    return header + importance_pixels(radii, domain_width).tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DataFormatError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
