"""Fail-closed Policy Enforcement Point.

Verification runs cheap-to-expensive across five layers:

  2. caller identity and invocation signature,
  4. context state: binding, hash chain, sequence number, timestamp,
  3. prompt lineage, intent-policy equality, and the policy-algebra check,
  1. denied/allowed pattern filtering over canonicalized parameter forms,
  5. advisory intent-drift scoring.

Every failure produces a DENY decision carrying the deciding layer and a
machine-readable reason code; no exception escapes for adversarial input.
Layers 1 and 5 are toggleable in configuration files; the harness may ablate
any layer programmatically.
"""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import yaml

from . import crypto
from .context import AuthenticatedContext, check_freshness, verify_chain
from .crypto import KeyPair, Registry, Signature
from .errors import ParameterMalformed, UnknownCaller
from .intent import (
    ConceptMap,
    ConceptOverlapScorer,
    DriftScore,
    Scorer,
    default_concepts,
)
from .policy import Policy, is_permitted, matches, intersect, READ_OPERATIONS, TOP
from .prompts import (
    AuthenticatedPrompt,
    DEFAULT_MAX_DEPTH,
    lineage_failure,
    prompt_to_bytes,
)
from .textnorm import (
    base64_alternate,
    collapse_path,
    evaluate_concatenation,
    fold_text,
)
from .wire import canonical_encode, encode_u64

ALLOW = "ALLOW"
DENY = "DENY"

# Reason codes, grouped by deciding layer.
REASON_OK = "OK"
REASON_UNKNOWN_CALLER = "UNKNOWN_CALLER"
REASON_BAD_SIGNATURE = "BAD_SIGNATURE"
REASON_UNKNOWN_TOOL = "UNKNOWN_TOOL"
REASON_INVOCATION_INVALID = "INVOCATION_INVALID"
REASON_CONTEXT_MISMATCH = "CONTEXT_MISMATCH"
REASON_PRINCIPAL_MISMATCH = "PRINCIPAL_MISMATCH"
REASON_TAMPER_DETECTED = "TAMPER_DETECTED"
REASON_SEQ_MISMATCH = "SEQ_MISMATCH"
REASON_STALE_TIMESTAMP = "STALE_TIMESTAMP"
REASON_ATTESTATION_INVALID = "ATTESTATION_INVALID"
REASON_ATTESTATION_STALE = "ATTESTATION_STALE"
REASON_LINEAGE_BROKEN = "LINEAGE_BROKEN"
REASON_DEPTH_EXCEEDED = "DEPTH_EXCEEDED"
REASON_INTENT_POLICY_MISMATCH = "INTENT_POLICY_MISMATCH"
REASON_PARAMETER_MALFORMED = "PARAMETER_MALFORMED"
REASON_DENIED_PATTERN = "DENIED_PATTERN"
REASON_NOT_ALLOWED = "NOT_ALLOWED"
REASON_POLICY_DENIED = "POLICY_DENIED"
REASON_RATE_LIMIT_EXCEEDED = "RATE_LIMIT_EXCEEDED"
REASON_INTENT_DRIFT = "INTENT_DRIFT"

REASON_CODES = frozenset(
    v for k, v in list(globals().items()) if k.startswith("REASON_")
)

ALL_LAYERS = frozenset({1, 2, 3, 4, 5})


@dataclass(frozen=True)
class Invocation:
    """A signed request to execute one operation against one tool."""

    invocation_id: str
    caller_id: str
    tool_id: str
    operation: str
    resource: str
    parameters: tuple[tuple[str, str], ...]
    intent_policy: Policy
    prompt: AuthenticatedPrompt
    context_id: str
    sequence_number: int
    timestamp: int
    sigma: Signature

    def signing_bytes(self) -> bytes:
        cached = self.__dict__.get("_signing_bytes")
        if cached is not None:
            return cached
        encoded = invocation_signing_bytes(
            invocation_id=self.invocation_id,
            caller_id=self.caller_id,
            tool_id=self.tool_id,
            operation=self.operation,
            resource=self.resource,
            parameters=self.parameters,
            intent_policy=self.intent_policy,
            prompt=self.prompt,
            context_id=self.context_id,
            sequence_number=self.sequence_number,
            timestamp=self.timestamp,
        )
        object.__setattr__(self, "_signing_bytes", encoded)
        return encoded


def invocation_signing_bytes(
    *,
    invocation_id: str,
    caller_id: str,
    tool_id: str,
    operation: str,
    resource: str,
    parameters: tuple[tuple[str, str], ...],
    intent_policy: Policy,
    prompt: AuthenticatedPrompt,
    context_id: str,
    sequence_number: int,
    timestamp: int,
) -> bytes:
    fields: list[tuple[str, bytes]] = [
        ("invocation_id", invocation_id.encode()),
        ("caller_id", caller_id.encode()),
        ("tool_id", tool_id.encode()),
        ("operation", operation.encode()),
        ("resource", resource.encode()),
    ]
    for name, value in parameters:
        fields.append((f"param.{name}", value.encode()))
    fields += [
        ("intent_policy", intent_policy.canonical_bytes()),
        ("prompt", prompt_to_bytes(prompt)),
        ("context_id", context_id.encode()),
        ("sequence_number", encode_u64(sequence_number)),
        ("timestamp", encode_u64(timestamp)),
    ]
    return canonical_encode(fields)


def build_invocation(
    *,
    invocation_id: str,
    kp: KeyPair,
    tool_id: str,
    operation: str,
    resource: str,
    prompt: AuthenticatedPrompt,
    context_id: str,
    sequence_number: int,
    timestamp: int,
    parameters: Mapping[str, str] | Sequence[tuple[str, str]] = (),
    caller_id: Optional[str] = None,
    intent_policy: Optional[Policy] = None,
) -> Invocation:
    """Assemble and sign an invocation; intent policy defaults to the
    prompt's policy, exactly as derivation placed it there."""
    params = tuple(parameters.items()) if isinstance(parameters, Mapping) else tuple(parameters)
    caller = caller_id if caller_id is not None else kp.key_id
    policy_slot = intent_policy if intent_policy is not None else prompt.policy
    payload = invocation_signing_bytes(
        invocation_id=invocation_id,
        caller_id=caller,
        tool_id=tool_id,
        operation=operation,
        resource=resource,
        parameters=params,
        intent_policy=policy_slot,
        prompt=prompt,
        context_id=context_id,
        sequence_number=sequence_number,
        timestamp=timestamp,
    )
    return Invocation(
        invocation_id=invocation_id,
        caller_id=caller,
        tool_id=tool_id,
        operation=operation,
        resource=resource,
        parameters=params,
        intent_policy=policy_slot,
        prompt=prompt,
        context_id=context_id,
        sequence_number=sequence_number,
        timestamp=timestamp,
        sigma=crypto.sign(payload, kp),
    )


@dataclass(frozen=True)
class Decision:
    verdict: str
    layer: Optional[int]
    reason_code: str
    detail: str
    effective_policy: Optional[Policy] = None

    @property
    def allowed(self) -> bool:
        return self.verdict == ALLOW


def _deny(layer: int, reason: str, detail: str, policy: Optional[Policy] = None) -> Decision:
    return Decision(verdict=DENY, layer=layer, reason_code=reason, detail=detail, effective_policy=policy)


def decision_record(invocation_id: str, decision: Decision) -> str:
    """One line of structured text per enforcement decision (JSON object)."""
    return json.dumps(
        {
            "invocation_id": invocation_id,
            "verdict": decision.verdict,
            "layer": decision.layer,
            "reason": decision.reason_code,
            "detail": decision.detail,
        },
        sort_keys=True,
    )


@dataclass(frozen=True)
class CanonicalParameter:
    original: str
    canonical: str
    alternates: frozenset[str]

    def forms(self) -> frozenset[str]:
        return frozenset({self.canonical, *self.alternates})


def canonicalize_parameter(raw: str) -> CanonicalParameter:
    """Reconstruct the value an obfuscated parameter will take at execution.

    Pipeline: evaluate quoted concatenations, probe for a base64 alternate,
    fold Unicode lookalikes, case-fold, collapse path traversal.  Alternates
    are matched against deny patterns but never substituted for execution.
    """
    joined = evaluate_concatenation(raw)
    alternates = set()
    decoded = base64_alternate(joined)
    if decoded is not None:
        alternates.add(collapse_path(fold_text(decoded)))
    canonical = collapse_path(fold_text(joined))
    alternates.discard(canonical)
    return CanonicalParameter(original=raw, canonical=canonical, alternates=frozenset(alternates))


@dataclass(frozen=True)
class PEPConfig:
    enabled_layers: frozenset[int] = ALL_LAYERS
    max_depth: int = DEFAULT_MAX_DEPTH
    freshness_window: int = 300
    read_operations: frozenset[str] = READ_OPERATIONS
    drift_threshold: float = 0.5
    rate_window: int = 60
    concepts: Optional[ConceptMap] = None

    def with_layers(self, layers: frozenset[int]) -> "PEPConfig":
        return replace(self, enabled_layers=frozenset(layers))

    def scorer(self) -> Scorer:
        concepts = self.concepts if self.concepts is not None else default_concepts()
        return ConceptOverlapScorer(concepts=concepts, threshold=self.drift_threshold)


def config_from_dict(data: Mapping) -> PEPConfig:
    """Config-file loader.  Only the advisory layers 1 and 5 are toggleable
    from files; the cryptographic layers 2-4 are always on."""
    data = data or {}
    layers = set(data.get("layers", sorted(ALL_LAYERS)))
    layers |= {2, 3, 4}
    concepts = None
    if "concepts" in data and data["concepts"] is not None:
        concepts = ConceptMap.from_dict(data["concepts"])
    return PEPConfig(
        enabled_layers=frozenset(int(l) for l in layers),
        max_depth=int(data.get("max_depth", DEFAULT_MAX_DEPTH)),
        freshness_window=int(data.get("freshness_window_seconds", 300)),
        read_operations=frozenset(data.get("read_operations", sorted(READ_OPERATIONS))),
        drift_threshold=float(data.get("drift_threshold", 0.5)),
        rate_window=int(data.get("rate_window_seconds", 60)),
        concepts=concepts,
    )


def config_from_file(path: str) -> PEPConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh) or {})


class RateLimitStore:
    """Sliding-window invocation counts per (principal, tool)."""

    def __init__(self, window_seconds: int = 60) -> None:
        self.window_seconds = window_seconds
        self._events: dict[tuple[str, str], deque[int]] = {}


def enforce_rate_limit(
    state: RateLimitStore,
    principal_id: str,
    tool_id: str,
    limit: int,
    now: int,
) -> bool:
    """True (and counted) while the window holds fewer than `limit` events."""
    if limit <= 0:
        raise ValueError("rate limit must be positive")
    key = (principal_id, tool_id)
    window = state._events.setdefault(key, deque())
    cutoff = now - state.window_seconds
    while window and window[0] <= cutoff:
        window.popleft()
    if len(window) >= limit:
        return False
    window.append(now)
    return True


def verify_and_enforce(
    inv: Invocation,
    ctx: AuthenticatedContext,
    reg: Registry,
    config: PEPConfig,
    *,
    now: Optional[int] = None,
    rate_state: Optional[RateLimitStore] = None,
    scorer: Optional[Scorer] = None,
) -> Decision:
    """Run every enabled layer against one invocation; fail closed.

    On ALLOW the caller executes the tool, signs the result with the tool
    key, and feeds it into apply_transition; execution itself never happens
    here.
    """
    try:
        return _verify_and_enforce(inv, ctx, reg, config, now=now, rate_state=rate_state, scorer=scorer)
    except Exception as exc:  # noqa: BLE001 - adversarial input must never escape
        return _deny(2, REASON_INVOCATION_INVALID, f"unprocessable invocation: {exc}")


def _verify_and_enforce(
    inv: Invocation,
    ctx: AuthenticatedContext,
    reg: Registry,
    config: PEPConfig,
    *,
    now: Optional[int],
    rate_state: Optional[RateLimitStore],
    scorer: Optional[Scorer],
) -> Decision:
    now = int(time.time()) if now is None else int(now)
    layers = config.enabled_layers

    # Layer 2: caller identity and invocation signature.
    if 2 in layers:
        try:
            caller_key = reg.lookup(inv.caller_id)
        except UnknownCaller:
            return _deny(2, REASON_UNKNOWN_CALLER, f"caller {inv.caller_id!r} is not registered")
        if not crypto.verify(inv.sigma, inv.signing_bytes(), caller_key):
            return _deny(2, REASON_BAD_SIGNATURE, "invocation signature does not verify")

    # Layer 4: context binding, chain integrity, freshness.
    if 4 in layers:
        if inv.context_id != ctx.context_id:
            return _deny(
                4, REASON_CONTEXT_MISMATCH,
                f"invocation bound to context {inv.context_id!r}, enforcing {ctx.context_id!r}",
            )
        if inv.prompt.metadata.context_id != ctx.context_id:
            return _deny(
                4, REASON_CONTEXT_MISMATCH,
                f"prompt created for context {inv.prompt.metadata.context_id!r}, "
                f"invoked in {ctx.context_id!r}",
            )
        if inv.caller_id != ctx.principal.principal_id:
            return _deny(
                4, REASON_PRINCIPAL_MISMATCH,
                f"caller {inv.caller_id!r} does not own context {ctx.context_id!r}",
            )
        if not verify_chain(ctx):
            return _deny(4, REASON_TAMPER_DETECTED, "context hash chain failed re-derivation")
        if inv.sequence_number != ctx.sequence_number:
            return _deny(
                4, REASON_SEQ_MISMATCH,
                f"request carries seq {inv.sequence_number}, context is at {ctx.sequence_number}",
            )
        if not check_freshness(ctx, inv.sequence_number, inv.timestamp, now, config.freshness_window):
            return _deny(
                4, REASON_STALE_TIMESTAMP,
                f"timestamp {inv.timestamp} older than the {config.freshness_window}s window",
            )

    # Layer 3 (lineage half): the prompt chain and the intent-policy slot.
    if 3 in layers:
        try:
            failure = lineage_failure(inv.prompt, reg, max_depth=config.max_depth)
        except UnknownCaller:
            return _deny(3, REASON_UNKNOWN_CALLER, "prompt creator is not registered")
        if failure is not None:
            return _deny(3, failure, "prompt lineage failed verification")
        if inv.intent_policy.canonical_bytes() != inv.prompt.policy.canonical_bytes():
            return _deny(
                3, REASON_INTENT_POLICY_MISMATCH,
                "intent policy differs from the prompt's derived policy",
            )

    # Effective policy: intent ∩ tool ∩ org.  An unknown tool is fail-closed.
    try:
        _tool_key, tool_policy = reg.get_resource_policy(inv.tool_id)
    except UnknownCaller:
        return _deny(2, REASON_UNKNOWN_TOOL, f"tool {inv.tool_id!r} is not registered")
    org_policy = reg.org_policy_for(ctx.principal.role) or TOP
    p_eff = intersect(intersect(inv.intent_policy, tool_policy), org_policy)

    # Layer 2 machinery: parameter reconstruction.
    if 2 in layers:
        try:
            resource_c = canonicalize_parameter(inv.resource)
            param_cs = [(k, canonicalize_parameter(v)) for k, v in inv.parameters]
        except ParameterMalformed as exc:
            return _deny(2, REASON_PARAMETER_MALFORMED, str(exc), p_eff)
    else:
        resource_c = CanonicalParameter(inv.resource, inv.resource, frozenset())
        param_cs = [(k, CanonicalParameter(v, v, frozenset())) for k, v in inv.parameters]

    # Layer 1: deny patterns over every reconstructed form, then the allow set.
    if 1 in layers:
        for label, cparam in [("resource", resource_c)] + [(f"parameter {k!r}", c) for k, c in param_cs]:
            for form in sorted(cparam.forms()):
                for pattern in p_eff.denied:
                    if matches(pattern, form):
                        return _deny(
                            1, REASON_DENIED_PATTERN,
                            f"{label} form {form!r} matches denied pattern {pattern.text!r}",
                            p_eff,
                        )
        if not any(matches(a, resource_c.canonical) for a in p_eff.allowed):
            return _deny(
                1, REASON_NOT_ALLOWED,
                f"resource {resource_c.canonical!r} matches no allowed pattern",
                p_eff,
            )

    # Layer 3 (algebra half): the permission function over the canonical resource.
    if 3 in layers:
        if not is_permitted(p_eff, resource_c.canonical, inv.operation, config.read_operations):
            return _deny(
                3, REASON_POLICY_DENIED,
                f"({resource_c.canonical!r}, {inv.operation!r}) is outside the effective policy",
                p_eff,
            )

    # Runtime constraint enforcement: rate limits are temporal, not part of
    # the permission function, and not a toggleable detection layer.
    if p_eff.constraints.rate_limit is not None and rate_state is not None:
        if not enforce_rate_limit(
            rate_state, ctx.principal.principal_id, inv.tool_id, p_eff.constraints.rate_limit, now
        ):
            return _deny(
                1, REASON_RATE_LIMIT_EXCEEDED,
                f"over {p_eff.constraints.rate_limit} calls per {rate_state.window_seconds}s window",
                p_eff,
            )

    # Layer 5: advisory drift scoring against the preserved root text.
    if 5 in layers:
        active_scorer = scorer if scorer is not None else config.scorer()
        score = active_scorer.score(inv.prompt.root_text, inv.prompt.text)
        if score.flagged:
            return _deny(
                5, REASON_INTENT_DRIFT,
                f"drift {score.value:.2f} > {score.threshold:.2f}; "
                f"concepts: {', '.join(score.flagged_concepts) or 'n/a'}",
                p_eff,
            )

    return Decision(
        verdict=ALLOW, layer=None, reason_code=REASON_OK,
        detail="all enabled layers passed", effective_policy=p_eff,
    )
