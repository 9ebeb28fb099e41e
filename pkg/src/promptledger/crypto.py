"""Ed25519 signatures, SHA-256 digests, and the trust-anchor registry.

Signing keys are 32-byte Ed25519 seeds; signatures are deterministic, which
keeps golden tests reproducible.  Key ids are self-certifying: the lowercase
hex of the first 16 bytes of SHA-256 over the raw public key.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import KeyFormatError, RegistryError, UnknownCaller
from .policy import Policy
from .wire import canonical_encode  # re-exported: part of the signing surface

__all__ = [
    "Digest",
    "Signature",
    "KeyPair",
    "Registry",
    "canonical_encode",
    "sha256",
    "sign",
    "verify",
    "key_id_for",
]

SIGNATURE_LEN = 64
KEY_LEN = 32


@dataclass(frozen=True)
class Digest:
    """A 32-byte SHA-256 output."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != 32:
            raise ValueError("digest must be exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.data.hex()


@dataclass(frozen=True)
class Signature:
    """Detached Ed25519 signature plus the signer's key id."""

    data: bytes
    signer_key_id: str

    def __post_init__(self) -> None:
        if len(self.data) != SIGNATURE_LEN:
            raise ValueError("signature must be exactly 64 bytes")


def sha256(payload: bytes) -> Digest:
    return Digest(hashlib.sha256(payload).digest())


def key_id_for(verify_key: bytes) -> str:
    """Self-certifying id: hex of the first 16 bytes of SHA-256(public key)."""
    return hashlib.sha256(verify_key).digest()[:16].hex()


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 key pair; the private half never appears in signed payloads."""

    signing_key: Ed25519PrivateKey = field(repr=False)
    verify_key: bytes
    key_id: str

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls.from_seed(secrets.token_bytes(KEY_LEN))

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != KEY_LEN:
            raise KeyFormatError(f"seed must be {KEY_LEN} bytes, got {len(seed)}")
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        vk = sk.public_key().public_bytes_raw()
        return cls(signing_key=sk, verify_key=vk, key_id=key_id_for(vk))

    @classmethod
    def from_seed_hex(cls, seed_hex: str) -> "KeyPair":
        try:
            seed = bytes.fromhex(seed_hex.strip())
        except ValueError as exc:
            raise KeyFormatError(f"undecodable seed hex: {exc}") from exc
        return cls.from_seed(seed)


def sign(payload: bytes, kp: KeyPair) -> Signature:
    return Signature(data=kp.signing_key.sign(payload), signer_key_id=kp.key_id)


def verify(sig: Union[Signature, bytes], payload: bytes, verify_key: bytes) -> bool:
    """True iff the signature matches payload under verify_key.

    Verification failure is a boolean result; only malformed key material
    raises.
    """
    if len(verify_key) != KEY_LEN:
        raise KeyFormatError(f"verify key must be {KEY_LEN} bytes, got {len(verify_key)}")
    try:
        public = Ed25519PublicKey.from_public_bytes(verify_key)
    except Exception as exc:  # pragma: no cover - from_public_bytes is length-checked above
        raise KeyFormatError(str(exc)) from exc
    raw = sig.data if isinstance(sig, Signature) else sig
    if len(raw) != SIGNATURE_LEN:
        return False
    try:
        public.verify(raw, payload)
        return True
    except InvalidSignature:
        return False


class Registry:
    """Trust anchor mapping ids to verification keys and resource policies.

    Append-only within a run: re-registering an existing id raises.  Every
    lookup of an unknown id raises :class:`UnknownCaller`, which enforcement
    code must translate into a denial.
    """

    def __init__(self) -> None:
        self._agents: dict[str, bytes] = {}
        self._tools: dict[str, tuple[bytes, Policy]] = {}
        self._org_policies: dict[str, Policy] = {}

    # -- registration -------------------------------------------------------

    def register_agent(self, agent_id: str, verify_key: bytes) -> None:
        if agent_id in self._agents:
            raise RegistryError(f"agent {agent_id!r} already registered")
        self._agents[agent_id] = verify_key

    def register_tool(self, tool_id: str, verify_key: bytes, resource_policy: Policy) -> None:
        if tool_id in self._tools:
            raise RegistryError(f"tool {tool_id!r} already registered")
        self._tools[tool_id] = (verify_key, resource_policy)

    def register_org_policy(self, principal_class: str, org_policy: Policy) -> None:
        if principal_class in self._org_policies:
            raise RegistryError(f"org policy for {principal_class!r} already registered")
        self._org_policies[principal_class] = org_policy

    # -- lookups (fail closed) ----------------------------------------------

    def lookup(self, caller_id: str) -> bytes:
        """Verification key for an agent or tool id; UnknownCaller if absent."""
        if caller_id in self._agents:
            return self._agents[caller_id]
        if caller_id in self._tools:
            return self._tools[caller_id][0]
        raise UnknownCaller(f"no registered key for {caller_id!r}")

    def get_resource_policy(self, tool_id: str) -> tuple[bytes, Policy]:
        if tool_id not in self._tools:
            raise UnknownCaller(f"no registered tool {tool_id!r}")
        return self._tools[tool_id]

    def org_policy_for(self, principal_class: str) -> Optional[Policy]:
        """Org policy by principal class, falling back to the '*' class."""
        if principal_class in self._org_policies:
            return self._org_policies[principal_class]
        return self._org_policies.get("*")

    def knows(self, any_id: str) -> bool:
        return any_id in self._agents or any_id in self._tools

    @property
    def agent_ids(self) -> frozenset[str]:
        return frozenset(self._agents)

    @property
    def tool_ids(self) -> frozenset[str]:
        return frozenset(self._tools)
