"""Length-prefixed canonical byte encoding used for every signed payload.

Each record is an ordered sequence of (field_name, value_bytes) pairs.  A
field is encoded as::

    4-byte big-endian name length | name UTF-8 | 4-byte big-endian value length | value

The encoding is injective over field sequences: two different sequences can
never produce the same bytes, so signatures over the encoding bind the exact
field structure, not just a concatenation of values.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import EncodingOverflow

_MAX_LEN = 2**32 - 1


def canonical_encode(fields: Iterable[tuple[str, bytes]]) -> bytes:
    """Encode an ordered (name, value) sequence into canonical bytes."""
    out = bytearray()
    for name, value in fields:
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > _MAX_LEN or len(value) > _MAX_LEN:
            raise EncodingOverflow(f"field {name!r} exceeds 2^32-1 bytes")
        out += len(name_bytes).to_bytes(4, "big")
        out += name_bytes
        out += len(value).to_bytes(4, "big")
        out += value
    return bytes(out)


def canonical_decode(payload: bytes) -> list[tuple[str, bytes]]:
    """Inverse of :func:`canonical_encode`.

    Raises ValueError on truncated or trailing bytes.
    """
    fields: list[tuple[str, bytes]] = []
    view = memoryview(payload)
    pos = 0
    total = len(view)
    while pos < total:
        if pos + 4 > total:
            raise ValueError("truncated field name length")
        name_len = int.from_bytes(view[pos : pos + 4], "big")
        pos += 4
        if pos + name_len > total:
            raise ValueError("truncated field name")
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        if pos + 4 > total:
            raise ValueError("truncated value length")
        value_len = int.from_bytes(view[pos : pos + 4], "big")
        pos += 4
        if pos + value_len > total:
            raise ValueError("truncated value")
        fields.append((name, bytes(view[pos : pos + value_len])))
        pos += value_len
    return fields


def encode_u32(n: int) -> bytes:
    return int(n).to_bytes(4, "big")


def encode_u64(n: int) -> bytes:
    return int(n).to_bytes(8, "big")


def decode_uint(b: bytes) -> int:
    return int.from_bytes(b, "big")
