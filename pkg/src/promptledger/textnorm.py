"""Parameter and text canonicalization used by the enforcement point.

The pipeline defeats the usual pattern-filter evasions: string
concatenation, base64-wrapped payloads, Unicode lookalikes, case games, and
path traversal.  Decoded base64 forms are surfaced as *alternates* for
matching only; they are never substituted back as the executed parameter.
"""

from __future__ import annotations

import base64
import re
import unicodedata
from functools import lru_cache
from importlib import resources

from .errors import ParameterMalformed

_QUOTED = re.compile(r"""\s*(["'])((?:(?!\1).)*)\1\s*""")
_BASE64_SHAPE = re.compile(r"^[A-Za-z0-9+/]+={0,2}$")


def _load_confusables() -> dict[str, str]:
    table: dict[str, str] = {}
    text = resources.files("promptledger.data").joinpath("confusables.txt").read_text()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        code, _, replacement = line.partition(" ")
        table[chr(int(code, 16))] = replacement.strip()
    return table


_CONFUSABLES = _load_confusables()


def fold_confusables(text: str) -> str:
    """Map known Unicode lookalikes onto their ASCII skeleton."""
    if not any(ch in _CONFUSABLES for ch in text):
        return text
    return "".join(_CONFUSABLES.get(ch, ch) for ch in text)


@lru_cache(maxsize=8192)
def fold_text(text: str) -> str:
    """Skeleton-fold, case-fold, and NFC-normalize a string for matching."""
    t = unicodedata.normalize("NFC", text)
    t = fold_confusables(t)
    return unicodedata.normalize("NFC", t.casefold())


def evaluate_concatenation(value: str) -> str:
    """Evaluate a concatenation expression of quoted literals joined by '+'.

    Values that do not open with a quote are returned untouched.  Anything
    that opens with a quote must parse fully, otherwise the value is
    rejected: a half-formed expression is an evasion attempt, not data.
    """
    stripped = value.lstrip()
    if not stripped or stripped[0] not in "\"'":
        return value
    parts: list[str] = []
    pos = 0
    text = value
    while True:
        m = _QUOTED.match(text, pos)
        if m is None:
            raise ParameterMalformed(f"bad string literal at offset {pos} in {value!r}")
        parts.append(m.group(2))
        pos = m.end()
        if pos == len(text):
            return "".join(parts)
        if text[pos] != "+":
            raise ParameterMalformed(f"expected '+' at offset {pos} in {value!r}")
        pos += 1
        if pos == len(text):
            raise ParameterMalformed(f"dangling '+' in {value!r}")


def base64_alternate(value: str) -> str | None:
    """Decoded form when the value looks like base64 and decodes to printable
    text; None otherwise."""
    if len(value) < 4 or len(value) % 4 != 0:
        return None
    if not _BASE64_SHAPE.match(value):
        return None
    try:
        decoded = base64.b64decode(value, validate=True).decode("utf-8")
    except Exception:
        return None
    if not decoded or not decoded.isprintable():
        return None
    return decoded


def collapse_path(value: str) -> str:
    """Lexically resolve '.' and '..' segments.

    Traversal that escapes the starting directory anchors the result at '/',
    so `./config/../../../etc/shadow` resolves to `/etc/shadow` and can be
    matched against absolute-path deny patterns.
    """
    if "/" not in value and value not in (".", ".."):
        return value
    absolute = value.startswith("/")
    escaped = False
    stack: list[str] = []
    for segment in value.split("/"):
        if segment in ("", "."):
            continue
        if segment == "..":
            if stack:
                stack.pop()
            else:
                escaped = True
            continue
        stack.append(segment)
    joined = "/".join(stack)
    if absolute or escaped:
        return "/" + joined
    return joined
