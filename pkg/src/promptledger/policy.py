"""Policy triples (allowed, denied, constraints) and their meet algebra.

A policy permits a (resource, operation) pair when the resource matches no
denied pattern, matches at least one allowed pattern, and the operation
satisfies the constraints.  Denial always dominates allowance.  Policies
combine through :func:`intersect`, which only ever adds restrictions:
allowed sets shrink, denied sets grow, constraints tighten.

Patterns use a single-metacharacter glob dialect: ``*`` matches any
(possibly empty) substring; ``?`` and character classes are rejected at
parse time.  Matching is case-insensitive over NFC-normalized text.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Union

from .errors import MergeRuleConflict, PatternSyntaxError
from .wire import canonical_encode, canonical_decode

#: Operations considered read-class when a policy carries read_only=true.
READ_OPERATIONS = frozenset({"read", "search", "list", "get"})

#: Extension merge rules: flag = boolean-restrictive (OR), min = numeric minimum.
EXTENSION_RULES = ("flag", "min")

_FORBIDDEN = ("?", "[", "]")


def _fold(text: str) -> str:
    # Case-fold then re-normalize: folding can denormalize composed characters.
    nfc = unicodedata.normalize("NFC", text)
    return unicodedata.normalize("NFC", nfc.casefold())


@dataclass(frozen=True, order=True)
class Pattern:
    """A glob where ``*`` matches any substring; stored case-folded and NFC-normalized."""

    text: str

    def __post_init__(self) -> None:
        for ch in _FORBIDDEN:
            if ch in self.text:
                raise PatternSyntaxError(
                    f"pattern {self.text!r}: only '*' is supported, found {ch!r}"
                )
        object.__setattr__(self, "text", _fold(self.text))


@lru_cache(maxsize=4096)
def _compiled(pattern_text: str) -> re.Pattern[str]:
    parts = pattern_text.split("*")
    return re.compile(".*".join(re.escape(p) for p in parts), re.DOTALL)


@lru_cache(maxsize=65536)
def _match_cached(pattern_text: str, folded_resource: str) -> bool:
    return _compiled(pattern_text).fullmatch(folded_resource) is not None


def matches(pattern: Pattern, resource: str) -> bool:
    """True iff the case-folded resource is in the language of the pattern."""
    return _match_cached(pattern.text, _fold(resource))


def _covers(general: str, specific: str) -> bool:
    """True iff every string matched by `specific` is also matched by `general`.

    Both arguments are canonical pattern texts where ``*`` is the wildcard.
    Decidable for the single-``*`` glob dialect: a literal in `general` can
    never cover a wildcard position in `specific`, while a wildcard in
    `general` may absorb any run of `specific` symbols.
    """
    m, n = len(general), len(specific)
    memo: dict[tuple[int, int], bool] = {}

    def go(i: int, j: int) -> bool:
        key = (i, j)
        if key in memo:
            return memo[key]
        if i == m:
            result = j == n
        elif general[i] == "*":
            result = go(i + 1, j) or (j < n and go(i, j + 1))
        elif j == n:
            result = False
        elif specific[j] == "*":
            result = False
        else:
            result = general[i] == specific[j] and go(i + 1, j + 1)
        memo[key] = result
        return result

    return go(0, 0)


@lru_cache(maxsize=65536)
def pattern_covers(general: Pattern, specific: Pattern) -> bool:
    """Language-containment test between two patterns."""
    return _covers(general.text, specific.text)


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

#: An extension entry: (name, merge rule, value).
ExtensionEntry = tuple[str, str, Union[bool, int, float]]


@dataclass(frozen=True)
class Constraints:
    """Operational constraints; merging always takes the tightest value."""

    read_only: bool = False
    rate_limit: Optional[int] = None
    max_depth: Optional[int] = None
    extensions: tuple[ExtensionEntry, ...] = ()

    def __post_init__(self) -> None:
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ValueError("rate_limit must be a positive integer")
        if self.max_depth is not None and self.max_depth <= 0:
            raise ValueError("max_depth must be a positive integer")
        seen = set()
        for name, rule, _value in self.extensions:
            if rule not in EXTENSION_RULES:
                raise ValueError(f"unknown extension rule {rule!r} for {name!r}")
            if name in seen:
                raise ValueError(f"duplicate extension key {name!r}")
            seen.add(name)
        object.__setattr__(self, "extensions", tuple(sorted(self.extensions)))


def most_restrictive(c1: Constraints, c2: Constraints) -> Constraints:
    """Per-field tightest merge: OR for read_only, min for numeric limits.

    Raises MergeRuleConflict when both sides declare the same extension key
    under different merge rules.
    """
    merged: dict[str, tuple[str, Union[bool, int, float]]] = {
        name: (rule, value) for name, rule, value in c1.extensions
    }
    for name, rule, value in c2.extensions:
        if name not in merged:
            merged[name] = (rule, value)
            continue
        prev_rule, prev_value = merged[name]
        if prev_rule != rule:
            raise MergeRuleConflict(
                f"extension {name!r} declared as {prev_rule!r} and {rule!r}"
            )
        if rule == "flag":
            merged[name] = (rule, bool(prev_value) or bool(value))
        else:
            merged[name] = (rule, min(prev_value, value))

    def _min_opt(a: Optional[int], b: Optional[int]) -> Optional[int]:
        if a is None:
            return b
        if b is None:
            return a
        return min(a, b)

    return Constraints(
        read_only=c1.read_only or c2.read_only,
        rate_limit=_min_opt(c1.rate_limit, c2.rate_limit),
        max_depth=_min_opt(c1.max_depth, c2.max_depth),
        extensions=tuple((n, r, v) for n, (r, v) in sorted(merged.items())),
    )


def operation_satisfies(
    constraints: Constraints,
    operation: str,
    read_operations: frozenset[str] = READ_OPERATIONS,
) -> bool:
    """Constraint filter used by the permission function.

    Only read_only participates: rate limits are temporal and enforced at
    runtime, max_depth bounds derivation, and extensions are advisory.
    """
    if constraints.read_only and operation not in read_operations:
        return False
    return True


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Policy:
    """(allowed patterns, denied patterns, constraints)."""

    allowed: frozenset[Pattern] = frozenset()
    denied: frozenset[Pattern] = frozenset()
    constraints: Constraints = Constraints()

    def canonical_bytes(self) -> bytes:
        """Deterministic byte form, used for signing and equality-by-wire checks."""
        cached = self.__dict__.get("_canonical_bytes")
        if cached is not None:
            return cached
        ext = "\n".join(
            f"{name}={rule}:{value}" for name, rule, value in self.constraints.extensions
        )
        encoded = canonical_encode(
            [
                ("allowed", "\n".join(sorted(p.text for p in self.allowed)).encode()),
                ("denied", "\n".join(sorted(p.text for p in self.denied)).encode()),
                ("read_only", b"1" if self.constraints.read_only else b"0"),
                (
                    "rate_limit",
                    b"" if self.constraints.rate_limit is None else str(self.constraints.rate_limit).encode(),
                ),
                (
                    "max_depth",
                    b"" if self.constraints.max_depth is None else str(self.constraints.max_depth).encode(),
                ),
                ("extensions", ext.encode()),
            ]
        )
        object.__setattr__(self, "_canonical_bytes", encoded)
        return encoded


def policy(
    allowed: Iterable[str] = (),
    denied: Iterable[str] = (),
    *,
    read_only: bool = False,
    rate_limit: Optional[int] = None,
    max_depth: Optional[int] = None,
    extensions: Iterable[ExtensionEntry] = (),
) -> Policy:
    """Convenience constructor from plain strings."""
    return Policy(
        allowed=frozenset(Pattern(a) for a in allowed),
        denied=frozenset(Pattern(d) for d in denied),
        constraints=Constraints(
            read_only=read_only,
            rate_limit=rate_limit,
            max_depth=max_depth,
            extensions=tuple(extensions),
        ),
    )


#: Grants everything: allowed = {*}, no denials, no constraints.
TOP = policy(allowed=["*"])


def policy_from_dict(data: Mapping) -> Policy:
    """Build a policy from the file schema: allowed/denied lists + constraints map."""
    data = data or {}
    cons = data.get("constraints") or {}
    extensions = []
    for name, spec in (cons.get("extensions") or {}).items():
        extensions.append((name, spec["rule"], spec["value"]))
    return policy(
        allowed=data.get("allowed") or [],
        denied=data.get("denied") or [],
        read_only=bool(cons.get("read_only", False)),
        rate_limit=cons.get("rate_limit"),
        max_depth=cons.get("max_depth"),
        extensions=extensions,
    )


def policy_to_dict(p: Policy) -> dict:
    """Inverse of :func:`policy_from_dict` (canonical, sorted)."""
    out: dict = {
        "allowed": sorted(pat.text for pat in p.allowed),
        "denied": sorted(pat.text for pat in p.denied),
    }
    cons: dict = {}
    if p.constraints.read_only:
        cons["read_only"] = True
    if p.constraints.rate_limit is not None:
        cons["rate_limit"] = p.constraints.rate_limit
    if p.constraints.max_depth is not None:
        cons["max_depth"] = p.constraints.max_depth
    if p.constraints.extensions:
        cons["extensions"] = {
            name: {"rule": rule, "value": value}
            for name, rule, value in p.constraints.extensions
        }
    if cons:
        out["constraints"] = cons
    return out


def policy_from_bytes(payload: bytes) -> Policy:
    """Rebuild a policy from :meth:`Policy.canonical_bytes` output."""
    fields = dict(canonical_decode(payload))
    extensions: list[ExtensionEntry] = []
    for line in fields["extensions"].decode().splitlines():
        name, rest = line.split("=", 1)
        rule, raw = rest.split(":", 1)
        value: Union[bool, int, float]
        if rule == "flag":
            value = raw == "True"
        else:
            value = float(raw) if "." in raw else int(raw)
        extensions.append((name, rule, value))
    return policy(
        allowed=[s for s in fields["allowed"].decode().splitlines() if s],
        denied=[s for s in fields["denied"].decode().splitlines() if s],
        read_only=fields["read_only"] == b"1",
        rate_limit=int(fields["rate_limit"]) if fields["rate_limit"] else None,
        max_depth=int(fields["max_depth"]) if fields["max_depth"] else None,
        extensions=extensions,
    )


def intersect(p1: Policy, p2: Policy) -> Policy:
    """Meet of two policies: allow only if both permit, deny if either forbids.

    The allowed side keeps every pattern whose language is contained in some
    pattern on the other side.  Exact set intersection alone would drop
    nested grants (e.g. a specific name against a prefix glob); the
    containment test preserves them without widening anything.
    """
    keep1 = {a for a in p1.allowed if any(pattern_covers(b, a) for b in p2.allowed)}
    keep2 = {b for b in p2.allowed if any(pattern_covers(a, b) for a in p1.allowed)}
    return Policy(
        allowed=frozenset(keep1 | keep2),
        denied=p1.denied | p2.denied,
        constraints=most_restrictive(p1.constraints, p2.constraints),
    )


# ---------------------------------------------------------------------------
# Permission function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PermissionSet:
    """Enumerated (resource, operation) pairs a policy permits over a universe."""

    entries: frozenset[tuple[str, str]]

    def sorted(self) -> list[tuple[str, str]]:
        return sorted(self.entries)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self.entries

    def __le__(self, other: "PermissionSet") -> bool:
        return self.entries <= other.entries


def permissions(
    p: Policy,
    universe: Iterable[tuple[str, str]],
    read_operations: frozenset[str] = READ_OPERATIONS,
) -> PermissionSet:
    """Enumerate the permitted subset of a finite (resource, operation) universe."""
    entries = set()
    for resource, operation in universe:
        if is_permitted(p, resource, operation, read_operations):
            entries.add((resource, operation))
    return PermissionSet(entries=frozenset(entries))


def is_permitted(
    p: Policy,
    resource: str,
    operation: str,
    read_operations: frozenset[str] = READ_OPERATIONS,
) -> bool:
    """Single-pair permission check; denial is evaluated before allowance."""
    if any(matches(d, resource) for d in p.denied):
        return False
    if not any(matches(a, resource) for a in p.allowed):
        return False
    return operation_satisfies(p.constraints, operation, read_operations)
