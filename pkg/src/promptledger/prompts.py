"""Signed prompts carrying parent/root lineage and monotonically shrinking policies.

A derived prompt embeds exactly one parent triple (id, signature, text) and
one root triple, so serialized size is independent of chain length: a chain
of one hundred derivations carries the same three signatures as a chain of
one.  Policies only tighten along a chain because every derivation
intersects the parent policy with the requesting tool and org policies.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass
from typing import Optional

from . import crypto
from .crypto import KeyPair, Registry, Signature
from .errors import DepthExceeded, InvalidPrompt, LineageBroken, UnknownCaller
from .policy import Policy, intersect, policy_from_bytes
from .wire import canonical_encode, canonical_decode, decode_uint, encode_u32, encode_u64

DEFAULT_MAX_DEPTH = 10

_ARMOR_HEAD = "-----BEGIN AUTHENTICATED PROMPT-----"
_ARMOR_TAIL = "-----END AUTHENTICATED PROMPT-----"

# Reason codes surfaced by lineage_failure (and reused by the enforcement point).
LINEAGE_OK = None
REASON_LINEAGE_BROKEN = "LINEAGE_BROKEN"
REASON_DEPTH_EXCEEDED = "DEPTH_EXCEEDED"


@dataclass(frozen=True)
class PromptMetadata:
    creator: str
    timestamp: int
    context_id: str
    root_creator: str


@dataclass(frozen=True)
class AuthenticatedPrompt:
    text: str
    id: str
    parent_id: Optional[str]
    parent_sigma: Optional[bytes]
    parent_text: Optional[str]
    root_id: str
    root_sigma: bytes
    root_text: str
    policy: Policy
    depth: int
    metadata: PromptMetadata
    sigma: Signature

    @property
    def is_root(self) -> bool:
        return self.parent_id is None

    def signing_bytes(self) -> bytes:
        cached = self.__dict__.get("_signing_bytes")
        if cached is not None:
            return cached
        encoded = _signing_bytes(
            text=self.text,
            id=self.id,
            parent_id=self.parent_id,
            parent_sigma=self.parent_sigma,
            parent_text=self.parent_text,
            root_id=self.root_id,
            root_sigma=self.root_sigma,
            root_text=self.root_text,
            policy=self.policy,
            depth=self.depth,
            metadata=self.metadata,
        )
        object.__setattr__(self, "_signing_bytes", encoded)
        return encoded


def _signing_bytes(
    *,
    text: str,
    id: str,
    parent_id: Optional[str],
    parent_sigma: Optional[bytes],
    parent_text: Optional[str],
    root_id: str,
    root_sigma: bytes,
    root_text: str,
    policy: Policy,
    depth: int,
    metadata: PromptMetadata,
) -> bytes:
    # Absent parent fields encode as empty values; real parents always have
    # non-empty ids and texts, so root and depth-1 prompts cannot collide.
    return canonical_encode(
        [
            ("text", text.encode()),
            ("id", id.encode()),
            ("parent_id", (parent_id or "").encode()),
            ("parent_sigma", parent_sigma or b""),
            ("parent_text", (parent_text or "").encode()),
            ("root_id", root_id.encode()),
            ("root_sigma", root_sigma),
            ("root_text", root_text.encode()),
            ("policy", policy.canonical_bytes()),
            ("depth", encode_u32(depth)),
            ("creator", metadata.creator.encode()),
            ("timestamp", encode_u64(metadata.timestamp)),
            ("context_id", metadata.context_id.encode()),
            ("root_creator", metadata.root_creator.encode()),
        ]
    )


def _root_binding_bytes(root_text: str, root_id: str) -> bytes:
    return canonical_encode([("root_text", root_text.encode()), ("root_id", root_id.encode())])


def _new_id(rng=None) -> str:
    if rng is None:
        return secrets.token_hex(16)
    return rng.getrandbits(128).to_bytes(16, "big").hex()


def create_root(
    text: str,
    user_policy: Policy,
    org_policy: Policy,
    kp: KeyPair,
    context_id: str,
    *,
    now: Optional[int] = None,
    rng=None,
) -> AuthenticatedPrompt:
    """Create a depth-0 prompt whose policy is user ∩ org.

    The root triple is self-referential: root_sigma is a separate signature
    binding (root_text, root_id), computed before the main signature so that
    descendants can verify the root from the embedded triple alone.
    """
    if not text:
        raise InvalidPrompt("root prompt text must be non-empty")
    prompt_id = _new_id(rng)
    timestamp = int(time.time()) if now is None else int(now)
    root_sigma = crypto.sign(_root_binding_bytes(text, prompt_id), kp)
    metadata = PromptMetadata(
        creator=kp.key_id, timestamp=timestamp, context_id=context_id, root_creator=kp.key_id
    )
    merged = intersect(user_policy, org_policy)
    payload = _signing_bytes(
        text=text,
        id=prompt_id,
        parent_id=None,
        parent_sigma=None,
        parent_text=None,
        root_id=prompt_id,
        root_sigma=root_sigma.data,
        root_text=text,
        policy=merged,
        depth=0,
        metadata=metadata,
    )
    return AuthenticatedPrompt(
        text=text,
        id=prompt_id,
        parent_id=None,
        parent_sigma=None,
        parent_text=None,
        root_id=prompt_id,
        root_sigma=root_sigma.data,
        root_text=text,
        policy=merged,
        depth=0,
        metadata=metadata,
        sigma=crypto.sign(payload, kp),
    )


def derive(
    parent: AuthenticatedPrompt,
    desc: str,
    tool_policy: Policy,
    org_policy: Policy,
    kp: KeyPair,
    reg: Registry,
    max_depth: int = DEFAULT_MAX_DEPTH,
    *,
    now: Optional[int] = None,
    rng=None,
) -> AuthenticatedPrompt:
    """Derive a child prompt: policy = parent ∩ tool ∩ org, depth + 1.

    Raises DepthExceeded once the parent sits at the depth bound and
    LineageBroken when the parent fails verification.  The caller places the
    child's policy into the invocation's intent_policy slot.
    """
    if not desc:
        raise InvalidPrompt("derived prompt text must be non-empty")
    bound = max_depth
    if parent.policy.constraints.max_depth is not None:
        bound = min(bound, parent.policy.constraints.max_depth)
    if parent.depth >= bound:
        raise DepthExceeded(f"parent depth {parent.depth} has reached the bound {bound}")
    failure = lineage_failure(parent, reg, max_depth=max_depth)
    if failure is not None:
        raise LineageBroken(f"parent prompt failed verification: {failure}")

    prompt_id = _new_id(rng)
    timestamp = int(time.time()) if now is None else int(now)
    metadata = PromptMetadata(
        creator=kp.key_id,
        timestamp=timestamp,
        context_id=parent.metadata.context_id,
        root_creator=parent.metadata.root_creator,
    )
    child_policy = intersect(intersect(parent.policy, tool_policy), org_policy)
    payload = _signing_bytes(
        text=desc,
        id=prompt_id,
        parent_id=parent.id,
        parent_sigma=parent.sigma.data,
        parent_text=parent.text,
        root_id=parent.root_id,
        root_sigma=parent.root_sigma,
        root_text=parent.root_text,
        policy=child_policy,
        depth=parent.depth + 1,
        metadata=metadata,
    )
    return AuthenticatedPrompt(
        text=desc,
        id=prompt_id,
        parent_id=parent.id,
        parent_sigma=parent.sigma.data,
        parent_text=parent.text,
        root_id=parent.root_id,
        root_sigma=parent.root_sigma,
        root_text=parent.root_text,
        policy=child_policy,
        depth=parent.depth + 1,
        metadata=metadata,
        sigma=crypto.sign(payload, kp),
    )


def lineage_failure(
    p: AuthenticatedPrompt,
    reg: Registry,
    parent_hint: Optional[AuthenticatedPrompt] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> Optional[str]:
    """Reason code for a lineage defect, or None when the prompt verifies.

    Checks, in order: the prompt's own signature under its creator's
    registered key, the optional parent hint, the root binding signature
    under the root creator's key, structural consistency, and the depth
    bound.  Unknown creator ids raise UnknownCaller (callers deny).
    """
    creator_key = reg.lookup(p.metadata.creator)
    if not crypto.verify(p.sigma, p.signing_bytes(), creator_key):
        return REASON_LINEAGE_BROKEN

    if parent_hint is not None:
        if (
            p.parent_sigma != parent_hint.sigma.data
            or p.parent_id != parent_hint.id
            or p.parent_text != parent_hint.text
            or p.depth != parent_hint.depth + 1
            or p.root_id != parent_hint.root_id
            or p.root_sigma != parent_hint.root_sigma
            or p.root_text != parent_hint.root_text
        ):
            return REASON_LINEAGE_BROKEN
        if lineage_failure(parent_hint, reg, max_depth=max_depth) is not None:
            return REASON_LINEAGE_BROKEN

    root_key = reg.lookup(p.metadata.root_creator)
    if not crypto.verify(p.root_sigma, _root_binding_bytes(p.root_text, p.root_id), root_key):
        return REASON_LINEAGE_BROKEN

    if p.is_root:
        if p.depth != 0 or p.root_id != p.id or p.root_text != p.text:
            return REASON_LINEAGE_BROKEN
        if p.parent_sigma is not None or p.parent_text is not None:
            return REASON_LINEAGE_BROKEN
    else:
        if p.depth < 1 or not p.parent_id or p.parent_sigma is None or p.parent_text is None:
            return REASON_LINEAGE_BROKEN

    bound = max_depth
    if p.policy.constraints.max_depth is not None:
        bound = min(bound, p.policy.constraints.max_depth)
    if p.depth > bound:
        return REASON_DEPTH_EXCEEDED
    return LINEAGE_OK


def verify_lineage(
    p: AuthenticatedPrompt,
    reg: Registry,
    parent_hint: Optional[AuthenticatedPrompt] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> bool:
    """Boolean façade over :func:`lineage_failure`; never raises for
    verification failures (unknown creator ids still raise UnknownCaller)."""
    return lineage_failure(p, reg, parent_hint, max_depth) is None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def prompt_to_bytes(p: AuthenticatedPrompt) -> bytes:
    """Full wire form: the signed payload plus the signature fields."""
    return p.signing_bytes() + canonical_encode(
        [("sigma", p.sigma.data), ("sigma_signer", p.sigma.signer_key_id.encode())]
    )


def prompt_from_bytes(payload: bytes) -> AuthenticatedPrompt:
    fields = dict(canonical_decode(payload))
    expected = {
        "text", "id", "parent_id", "parent_sigma", "parent_text",
        "root_id", "root_sigma", "root_text", "policy", "depth",
        "creator", "timestamp", "context_id", "root_creator",
        "sigma", "sigma_signer",
    }
    if set(fields) != expected:
        raise ValueError(f"unexpected prompt fields: {sorted(set(fields) ^ expected)}")
    parent_id = fields["parent_id"].decode() or None
    return AuthenticatedPrompt(
        text=fields["text"].decode(),
        id=fields["id"].decode(),
        parent_id=parent_id,
        parent_sigma=fields["parent_sigma"] if parent_id else None,
        parent_text=fields["parent_text"].decode() if parent_id else None,
        root_id=fields["root_id"].decode(),
        root_sigma=fields["root_sigma"],
        root_text=fields["root_text"].decode(),
        policy=policy_from_bytes(fields["policy"]),
        depth=decode_uint(fields["depth"]),
        metadata=PromptMetadata(
            creator=fields["creator"].decode(),
            timestamp=decode_uint(fields["timestamp"]),
            context_id=fields["context_id"].decode(),
            root_creator=fields["root_creator"].decode(),
        ),
        sigma=Signature(data=fields["sigma"], signer_key_id=fields["sigma_signer"].decode()),
    )


def embedded_signature_count(p: AuthenticatedPrompt) -> int:
    """Number of 64-byte signatures a serialized prompt carries (3 when derived)."""
    count = 2  # own sigma + root binding sigma
    if p.parent_sigma is not None:
        count += 1
    return count


def to_armor(p: AuthenticatedPrompt) -> str:
    """Hex-armored text block for corpus files and CLI inspection."""
    body = prompt_to_bytes(p).hex()
    lines = [body[i : i + 64] for i in range(0, len(body), 64)]
    return "\n".join([_ARMOR_HEAD, *lines, _ARMOR_TAIL]) + "\n"


def from_armor(text: str) -> AuthenticatedPrompt:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if not lines or lines[0] != _ARMOR_HEAD or lines[-1] != _ARMOR_TAIL:
        raise ValueError("missing authenticated-prompt armor markers")
    return prompt_from_bytes(bytes.fromhex("".join(lines[1:-1])))
