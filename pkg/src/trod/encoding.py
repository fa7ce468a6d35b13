"""Canonical value encoding and 64-bit FNV-1a digests.

Cell values are restricted to null, bool, 64-bit signed int, and UTF-8 text.
The canonical encoding is type-tagged and length-prefixed so that digests are
reproducible across runs and platforms; the algorithm identifier ("fnv1a64")
is pinned in trace manifests and checked on import.
"""

from __future__ import annotations

import struct
from typing import Any

TYPE_NULL = "Null"
TYPE_BOOL = "Bool"
TYPE_INT = "Int"
TYPE_TEXT = "Text"

COLUMN_TYPES = (TYPE_BOOL, TYPE_INT, TYPE_TEXT)

INT64_MIN = -(2 ** 63)
INT64_MAX = 2 ** 63 - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def value_type(value: Any) -> str:
    """Name of the value's cell type. Rejects anything outside the value model."""
    if value is None:
        return TYPE_NULL
    t = type(value)
    if t is bool:
        return TYPE_BOOL
    if t is int:
        return TYPE_INT
    if t is str:
        return TYPE_TEXT
    raise TypeError(f"unsupported value type: {type(value).__name__}")


def check_column_value(value: Any, column_type: str, nullable: bool, where: str = "") -> None:
    """Validate one cell against its declared column type; raises ValueError."""
    ctx = f" in {where}" if where else ""
    if value is None:
        if not nullable:
            raise ValueError(f"null not allowed{ctx}")
        return
    vt = value_type(value)
    if vt != column_type:
        raise ValueError(f"expected {column_type}, got {vt}{ctx}")
    if vt == TYPE_INT and not (INT64_MIN <= value <= INT64_MAX):
        raise ValueError(f"int out of 64-bit range{ctx}")


def compare_values(a: Any, b: Any) -> int:
    """Three-way compare within one non-null type; cross-type or null raises TypeError."""
    ta, tb = value_type(a), value_type(b)
    if ta == TYPE_NULL or tb == TYPE_NULL:
        raise TypeError("null is not comparable")
    if ta != tb:
        raise TypeError(f"cannot compare {ta} with {tb}")
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def canonical_bytes(value: Any) -> bytes:
    """Deterministic byte form: type tag, big-endian length prefix, payload.

    Accepts scalars from the value model plus lists, tuples, and string-keyed
    dicts (encoded with keys sorted). Objects exposing ``canonical_value()``
    are replaced by that value first.
    """
    conv = getattr(value, "canonical_value", None)
    if conv is not None:
        value = conv()
    if value is None:
        return b"N"
    t = type(value)
    if t is bool:
        return b"B\x01" if value else b"B\x00"
    if t is int:
        try:
            return b"I" + struct.pack(">q", value)
        except struct.error:
            raise ValueError("int out of 64-bit range") from None
    if t is str:
        raw = value.encode("utf-8")
        return b"T" + struct.pack(">I", len(raw)) + raw
    if t is list or t is tuple:
        parts = [canonical_bytes(v) for v in value]
        return b"L" + struct.pack(">I", len(parts)) + b"".join(parts)
    if t is dict:
        items = sorted(value.items(), key=lambda kv: kv[0])
        parts = [canonical_bytes(k) + canonical_bytes(v) for k, v in items]
        return b"D" + struct.pack(">I", len(parts)) + b"".join(parts)
    raise TypeError(f"cannot canonicalize {type(value).__name__}")


def digest(value: Any) -> str:
    """16-hex-digit FNV-1a digest of the canonical encoding."""
    return f"{fnv1a64(canonical_bytes(value)):016x}"


def canonical_decode(data: bytes) -> Any:
    """Inverse of :func:`canonical_bytes` (lists come back as lists)."""
    value, pos = _decode_at(data, 0)
    if pos != len(data):
        raise ValueError(f"trailing bytes after canonical value at {pos}")
    return value


def _decode_at(data: bytes, pos: int):
    tag = data[pos:pos + 1]
    if tag == b"N":
        return None, pos + 1
    if tag == b"B":
        return data[pos + 1] != 0, pos + 2
    if tag == b"I":
        (v,) = struct.unpack(">q", data[pos + 1:pos + 9])
        return v, pos + 9
    if tag == b"T":
        (n,) = struct.unpack(">I", data[pos + 1:pos + 5])
        start = pos + 5
        return data[start:start + n].decode("utf-8"), start + n
    if tag == b"L":
        (n,) = struct.unpack(">I", data[pos + 1:pos + 5])
        pos += 5
        items = []
        for _ in range(n):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return items, pos
    if tag == b"D":
        (n,) = struct.unpack(">I", data[pos + 1:pos + 5])
        pos += 5
        out = {}
        for _ in range(n):
            k, pos = _decode_at(data, pos)
            v, pos = _decode_at(data, pos)
            out[k] = v
        return out, pos
    raise ValueError(f"bad canonical tag {tag!r} at {pos}")


DIGEST_ALGO = "fnv1a64"


# --- tagged JSON codec (workload files encode argument values this way) ----

def value_to_json(value: Any) -> dict:
    vt = value_type(value)
    if vt == TYPE_NULL:
        return {"t": TYPE_NULL}
    return {"t": vt, "v": value}


def value_from_json(obj: Any) -> Any:
    if not isinstance(obj, dict) or "t" not in obj:
        raise ValueError(f"not a tagged value: {obj!r}")
    t = obj["t"]
    if t == TYPE_NULL:
        return None
    v = obj.get("v")
    if t == TYPE_BOOL and type(v) is bool:
        return v
    if t == TYPE_INT and type(v) is int and not isinstance(v, bool):
        return v
    if t == TYPE_TEXT and type(v) is str:
        return v
    raise ValueError(f"bad tagged value: {obj!r}")


def display_value(value: Any) -> str:
    """Human rendering used in provenance query text and reports."""
    if value is None:
        return "null"
    if type(value) is bool:
        return "true" if value else "false"
    return str(value)
