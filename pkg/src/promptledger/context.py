"""Principal-bound, hash-chained agent state with attestations.

Every transition appends one entry to a SHA-256 chain:

    H_next = SHA256(encode(H_prev, caller signature, result bytes))

and bumps a strictly monotonic sequence number.  Contexts are immutable
value objects: a transition returns a new context, so verification can run
against any snapshot.  The entry log stores result digests; full result and
invocation payload bytes live beside the log keyed by invocation id, which
keeps the log compact while still letting anyone re-derive the whole chain.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass, replace
from typing import Mapping, Optional

from . import crypto
from .crypto import Digest, KeyPair, Registry, Signature
from .errors import PrincipalViolation, SecurityViolation, SignatureInvalid, UnknownCaller
from .wire import canonical_encode


@dataclass(frozen=True)
class Principal:
    principal_id: str
    verify_key: bytes
    role: str


@dataclass(frozen=True)
class ChainEntry:
    seq: int
    invocation_id: str
    h_prev: Digest
    sigma_caller: Signature
    result_digest: Digest
    h_new: Digest


@dataclass(frozen=True)
class Attestation:
    """Proof that a named operation completed within this chain."""

    name: str
    invocation_id: str
    sigma_caller: Signature
    sigma_tool: Signature
    h_prev: Digest
    h_new: Digest
    created_at: int


@dataclass(frozen=True)
class TransitionRecord:
    """Full payload/result bytes for one transition, keyed by invocation id."""

    invocation_id: str
    payload: bytes
    result: bytes


@dataclass(frozen=True)
class AuthenticatedContext:
    context_id: str
    principal: Principal
    sequence_number: int
    genesis: Digest
    head: Digest
    entries: tuple[ChainEntry, ...]
    attestations: Mapping[str, Attestation]
    records: Mapping[str, TransitionRecord]
    created_at: int


def chain_step(h_prev: Digest, sigma_caller: bytes, result: bytes) -> Digest:
    """One link of the hash chain over the canonical encoding of its inputs."""
    return crypto.sha256(
        canonical_encode(
            [("h_prev", h_prev.data), ("sigma", sigma_caller), ("result", result)]
        )
    )


def create_context(
    principal: Optional[Principal],
    initial_state: bytes,
    reg: Registry,
    *,
    context_id: Optional[str] = None,
    now: Optional[int] = None,
    rng=None,
) -> AuthenticatedContext:
    """Create a sequence-0 context whose head is SHA256(initial_state).

    Principal binding is mandatory: a missing or unregistered principal is an
    immediate security violation, not a recoverable condition.
    """
    if principal is None:
        raise SecurityViolation("context creation requires a principal")
    try:
        registered_key = reg.lookup(principal.principal_id)
    except UnknownCaller as exc:
        raise SecurityViolation(f"principal {principal.principal_id!r} is not registered") from exc
    if registered_key != principal.verify_key:
        raise SecurityViolation(
            f"principal {principal.principal_id!r} key does not match the registry"
        )
    if context_id is None:
        context_id = secrets.token_hex(16) if rng is None else rng.getrandbits(128).to_bytes(16, "big").hex()
    genesis = crypto.sha256(initial_state)
    return AuthenticatedContext(
        context_id=context_id,
        principal=principal,
        sequence_number=0,
        genesis=genesis,
        head=genesis,
        entries=(),
        attestations={},
        records={},
        created_at=int(time.time()) if now is None else int(now),
    )


def apply_transition(
    ctx: AuthenticatedContext,
    sigma_caller: Signature,
    signed_payload: bytes,
    result: bytes,
    requesting_principal: Principal,
    reg: Registry,
    invocation_id: str,
    *,
    attestation_name: Optional[str] = None,
    tool_sig: Optional[Signature] = None,
    now: Optional[int] = None,
) -> AuthenticatedContext:
    """Extend the chain by one entry and return the successor context.

    The caller signature must verify over the invocation payload that
    authorized this update, and only the owning principal may update.  When
    an attestation name is given, a tool signature over the result is
    required as the second half of the proof.
    """
    if requesting_principal.principal_id != ctx.principal.principal_id:
        raise PrincipalViolation(
            f"{requesting_principal.principal_id!r} cannot update a context owned by "
            f"{ctx.principal.principal_id!r}"
        )
    caller_key = reg.lookup(sigma_caller.signer_key_id)
    if not crypto.verify(sigma_caller, signed_payload, caller_key):
        raise SignatureInvalid("caller signature does not verify over the invocation payload")
    if attestation_name is not None:
        if tool_sig is None:
            raise SignatureInvalid("attestations require a tool signature over the result")
        tool_key = reg.lookup(tool_sig.signer_key_id)
        if not crypto.verify(tool_sig, result, tool_key):
            raise SignatureInvalid("tool signature does not verify over the result")

    h_prev = ctx.head
    h_new = chain_step(h_prev, sigma_caller.data, result)
    entry = ChainEntry(
        seq=ctx.sequence_number + 1,
        invocation_id=invocation_id,
        h_prev=h_prev,
        sigma_caller=sigma_caller,
        result_digest=crypto.sha256(result),
        h_new=h_new,
    )
    records = dict(ctx.records)
    records[invocation_id] = TransitionRecord(
        invocation_id=invocation_id, payload=signed_payload, result=result
    )
    attestations = dict(ctx.attestations)
    if attestation_name is not None:
        attestations[attestation_name] = Attestation(
            name=attestation_name,
            invocation_id=invocation_id,
            sigma_caller=sigma_caller,
            sigma_tool=tool_sig,
            h_prev=h_prev,
            h_new=h_new,
            created_at=int(time.time()) if now is None else int(now),
        )
    return replace(
        ctx,
        sequence_number=ctx.sequence_number + 1,
        head=h_new,
        entries=ctx.entries + (entry,),
        attestations=attestations,
        records=records,
    )


def verify_chain(ctx: AuthenticatedContext) -> bool:
    """Re-derive every link from the genesis digest; False on any mismatch."""
    h = ctx.genesis
    for index, entry in enumerate(ctx.entries):
        if entry.seq != index + 1:
            return False
        if entry.h_prev != h:
            return False
        record = ctx.records.get(entry.invocation_id)
        if record is None:
            return False
        if crypto.sha256(record.result) != entry.result_digest:
            return False
        expected = chain_step(h, entry.sigma_caller.data, record.result)
        if expected != entry.h_new:
            return False
        h = entry.h_new
    if h != ctx.head:
        return False
    return ctx.sequence_number == len(ctx.entries)


def require_attestation(
    ctx: AuthenticatedContext,
    name: str,
    max_age_seconds: int,
    now: int,
    reg: Registry,
) -> bool:
    """True iff the named attestation exists, verifies, links into this
    chain, and is no older than max_age_seconds."""
    att = ctx.attestations.get(name)
    if att is None:
        return False
    record = ctx.records.get(att.invocation_id)
    if record is None:
        return False
    try:
        caller_key = reg.lookup(att.sigma_caller.signer_key_id)
        tool_key = reg.lookup(att.sigma_tool.signer_key_id)
    except UnknownCaller:
        return False
    if not crypto.verify(att.sigma_caller, record.payload, caller_key):
        return False
    if not crypto.verify(att.sigma_tool, record.result, tool_key):
        return False
    if not any(
        e.h_prev == att.h_prev and e.h_new == att.h_new and e.invocation_id == att.invocation_id
        for e in ctx.entries
    ):
        return False
    return now - att.created_at <= max_age_seconds


def check_freshness(
    ctx: AuthenticatedContext,
    request_seq: int,
    request_ts: int,
    now: int,
    window_seconds: int,
) -> bool:
    """Replay gate: the request must carry the current sequence number and a
    timestamp no older than the freshness window."""
    if request_seq != ctx.sequence_number:
        return False
    return now - request_ts <= window_seconds


# ---------------------------------------------------------------------------
# Export format (independent re-verification by the CLI)
# ---------------------------------------------------------------------------

_EXPORT_HEAD = "PROMPTLEDGER-CONTEXT-EXPORT v1"


def export_context(ctx: AuthenticatedContext) -> str:
    """Text export carrying everything needed to re-run chain verification."""
    lines = [
        _EXPORT_HEAD,
        f"context_id: {ctx.context_id}",
        f"principal: {ctx.principal.principal_id}",
        f"role: {ctx.principal.role}",
        f"principal_key: {ctx.principal.verify_key.hex()}",
        f"created_at: {ctx.created_at}",
        f"genesis: {ctx.genesis.hex}",
        f"head: {ctx.head.hex}",
        f"seq: {ctx.sequence_number}",
    ]
    for e in ctx.entries:
        lines.append(
            "entry: "
            f"seq={e.seq} inv={e.invocation_id} h_prev={e.h_prev.hex} "
            f"sigma={e.sigma_caller.signer_key_id}:{e.sigma_caller.data.hex()} "
            f"result_digest={e.result_digest.hex} h_new={e.h_new.hex}"
        )
    for r in ctx.records.values():
        lines.append(f"record: inv={r.invocation_id} payload={r.payload.hex()} result={r.result.hex()}")
    for a in ctx.attestations.values():
        lines.append(
            "attestation: "
            f"name={a.name} inv={a.invocation_id} "
            f"sigma_caller={a.sigma_caller.signer_key_id}:{a.sigma_caller.data.hex()} "
            f"sigma_tool={a.sigma_tool.signer_key_id}:{a.sigma_tool.data.hex()} "
            f"h_prev={a.h_prev.hex} h_new={a.h_new.hex} created_at={a.created_at}"
        )
    return "\n".join(lines) + "\n"


def _parse_kv(parts: list[str]) -> dict[str, str]:
    return dict(p.split("=", 1) for p in parts)


def _parse_sig(text: str) -> Signature:
    signer, raw = text.split(":", 1)
    return Signature(data=bytes.fromhex(raw), signer_key_id=signer)


def parse_export(text: str) -> AuthenticatedContext:
    """Rebuild a context snapshot from :func:`export_context` output."""
    lines = [ln.rstrip("\n") for ln in text.strip().splitlines()]
    if not lines or lines[0] != _EXPORT_HEAD:
        raise ValueError("not a context export (missing header)")
    header: dict[str, str] = {}
    entries: list[ChainEntry] = []
    records: dict[str, TransitionRecord] = {}
    attestations: dict[str, Attestation] = {}
    for ln in lines[1:]:
        key, _, rest = ln.partition(": ")
        if key == "entry":
            kv = _parse_kv(rest.split(" "))
            entries.append(
                ChainEntry(
                    seq=int(kv["seq"]),
                    invocation_id=kv["inv"],
                    h_prev=Digest(bytes.fromhex(kv["h_prev"])),
                    sigma_caller=_parse_sig(kv["sigma"]),
                    result_digest=Digest(bytes.fromhex(kv["result_digest"])),
                    h_new=Digest(bytes.fromhex(kv["h_new"])),
                )
            )
        elif key == "record":
            kv = _parse_kv(rest.split(" "))
            records[kv["inv"]] = TransitionRecord(
                invocation_id=kv["inv"],
                payload=bytes.fromhex(kv["payload"]),
                result=bytes.fromhex(kv["result"]),
            )
        elif key == "attestation":
            kv = _parse_kv(rest.split(" "))
            attestations[kv["name"]] = Attestation(
                name=kv["name"],
                invocation_id=kv["inv"],
                sigma_caller=_parse_sig(kv["sigma_caller"]),
                sigma_tool=_parse_sig(kv["sigma_tool"]),
                h_prev=Digest(bytes.fromhex(kv["h_prev"])),
                h_new=Digest(bytes.fromhex(kv["h_new"])),
                created_at=int(kv["created_at"]),
            )
        else:
            header[key] = rest
    return AuthenticatedContext(
        context_id=header["context_id"],
        principal=Principal(
            principal_id=header["principal"],
            verify_key=bytes.fromhex(header["principal_key"]),
            role=header["role"],
        ),
        sequence_number=int(header["seq"]),
        genesis=Digest(bytes.fromhex(header["genesis"])),
        head=Digest(bytes.fromhex(header["head"])),
        entries=tuple(entries),
        attestations=attestations,
        records=records,
        created_at=int(header["created_at"]),
    )


def first_broken_link(ctx: AuthenticatedContext) -> Optional[int]:
    """Index (0-based) of the first entry that fails re-derivation, or None.

    Returns len(entries) when all links hold but the head or sequence number
    disagrees with the log.
    """
    h = ctx.genesis
    for index, entry in enumerate(ctx.entries):
        record = ctx.records.get(entry.invocation_id)
        if (
            entry.seq != index + 1
            or entry.h_prev != h
            or record is None
            or crypto.sha256(record.result) != entry.result_digest
            or chain_step(h, entry.sigma_caller.data, record.result) != entry.h_new
        ):
            return index
        h = entry.h_new
    if h != ctx.head or ctx.sequence_number != len(ctx.entries):
        return len(ctx.entries)
    return None
