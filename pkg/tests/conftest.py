"""Shared fixtures, random generators, and independent oracles.

The policy generators draw allowed patterns from a laminar family (exact
names, dot-prefix globs, and '*'): any two such patterns are either nested
or disjoint, which is the regime where pattern-set intersection coincides
with language intersection.  Denied patterns are unrestricted.

The permission oracle is intentionally independent of the implementation:
it matches through fnmatch and evaluates the set-builder definition
directly.
"""

from __future__ import annotations

import fnmatch
import random

import pytest

from promptledger import context as ctxmod
from promptledger import crypto, pep, prompts
from promptledger.context import Principal
from promptledger.policy import Policy, READ_OPERATIONS, policy

SEG_A = ("db", "fs", "mail", "docs", "reports")
SEG_B = ("users", "sales", "logs", "archive")
SEG_C = ("q1", "q2", "raw", "summary", "credentials", "notes.pii")

ALL_RESOURCES = tuple(f"{a}.{b}.{c}" for a in SEG_A for b in SEG_B for c in SEG_C)
ALL_OPERATIONS = ("read", "write", "search", "list", "get", "send")

DENIED_POOL = (
    "*credential*",
    "*password*",
    "*.pii",
    "*secret*",
    "db.users.*",
    "mail.*",
    "*.raw",
    "fs.logs.q1",
)

# Extension names carry a fixed merge rule so random intersections never
# produce a rule conflict.
EXTENSION_POOL = (("audit", "flag"), ("quota", "min"), ("ttl", "min"))


def random_allowed_pattern(rng: random.Random) -> str:
    kind = rng.random()
    if kind < 0.08:
        return "*"
    a = rng.choice(SEG_A)
    if kind < 0.35:
        return f"{a}.*"
    b = rng.choice(SEG_B)
    if kind < 0.62:
        return f"{a}.{b}.*"
    return f"{a}.{b}.{rng.choice(SEG_C)}"


def random_policy(rng: random.Random, *, denial_rate: float = 0.6) -> Policy:
    allowed = {random_allowed_pattern(rng) for _ in range(rng.randint(1, 4))}
    denied = set()
    if rng.random() < denial_rate:
        denied = {rng.choice(DENIED_POOL) for _ in range(rng.randint(1, 3))}
    extensions = []
    if rng.random() < 0.3:
        name, rule = rng.choice(EXTENSION_POOL)
        value = True if rule == "flag" else rng.randint(1, 100)
        extensions.append((name, rule, value))
    return policy(
        allowed=allowed,
        denied=denied,
        read_only=rng.random() < 0.3,
        rate_limit=rng.randint(1, 200) if rng.random() < 0.2 else None,
        max_depth=None,
        extensions=extensions,
    )


def random_universe(
    rng: random.Random, max_resources: int = 50, max_ops: int = 3
) -> list[tuple[str, str]]:
    resources = rng.sample(ALL_RESOURCES, rng.randint(4, min(max_resources, len(ALL_RESOURCES))))
    ops = rng.sample(ALL_OPERATIONS, rng.randint(2, max_ops))
    return [(r, op) for r in resources for op in ops]


def oracle_matches(pattern_text: str, resource: str) -> bool:
    return fnmatch.fnmatchcase(resource.casefold(), pattern_text.casefold())


def oracle_permissions(
    p: Policy, universe, read_operations=READ_OPERATIONS
) -> set[tuple[str, str]]:
    """Brute-force set-builder evaluation with an independent matcher."""
    out = set()
    for resource, operation in universe:
        if any(oracle_matches(d.text, resource) for d in p.denied):
            continue
        if not any(oracle_matches(a.text, resource) for a in p.allowed):
            continue
        if p.constraints.read_only and operation not in read_operations:
            continue
        out.add((resource, operation))
    return out


class Env:
    """Minimal registered world: one agent, one secondary principal, tools."""

    def __init__(self, *, org: Policy | None = None, context_id: str = "ctx-main"):
        self.rng = random.Random(0xBEEF)
        self.now = 1_700_000_000
        self.reg = crypto.Registry()
        self.agent = crypto.KeyPair.from_seed(bytes([1]) * 32)
        self.bob = crypto.KeyPair.from_seed(bytes([2]) * 32)
        self.attacker = crypto.KeyPair.from_seed(bytes([3]) * 32)
        self.reg.register_agent("agent-1", self.agent.verify_key)
        self.reg.register_agent(self.agent.key_id, self.agent.verify_key)
        self.reg.register_agent("agent-2", self.bob.verify_key)
        self.reg.register_agent(self.bob.key_id, self.bob.verify_key)
        self.tools = {}
        for tool_id in ("search", "list", "read", "db", "email", "anonymize"):
            kp = crypto.KeyPair.from_seed(bytes([10 + len(self.tools)]) * 32)
            self.tools[tool_id] = kp
            self.reg.register_tool(tool_id, kp.verify_key, policy(allowed=["*"]))
            self.reg.register_agent(kp.key_id, kp.verify_key)
        self.org = org if org is not None else policy(
            allowed=["*"], denied=["*credential*", "*password*", "*.pii"]
        )
        self.reg.register_org_policy("*", self.org)
        self.principal = Principal("agent-1", self.agent.verify_key, "analyst")
        self.bob_principal = Principal("agent-2", self.bob.verify_key, "clerk")
        self.ctx = ctxmod.create_context(
            self.principal, b"init", self.reg, context_id=context_id, now=self.now, rng=self.rng
        )

    def root(self, text="analyze quarterly sales data", user=None, context_id=None):
        return prompts.create_root(
            text,
            user if user is not None else policy(allowed=["*"]),
            self.org,
            self.agent,
            context_id if context_id is not None else self.ctx.context_id,
            now=self.now,
            rng=self.rng,
        )

    def invoke(
        self,
        prompt,
        *,
        tool="search",
        operation="search",
        resource="docs.q4_report",
        params=(),
        seq=None,
        ts=None,
        caller="agent-1",
        kp=None,
        inv_id=None,
        intent_policy=None,
        context_id=None,
    ):
        return pep.build_invocation(
            invocation_id=inv_id or f"inv-{self.rng.getrandbits(32):08x}",
            kp=kp if kp is not None else self.agent,
            caller_id=caller,
            tool_id=tool,
            operation=operation,
            resource=resource,
            parameters=dict(params),
            prompt=prompt,
            context_id=context_id if context_id is not None else self.ctx.context_id,
            sequence_number=self.ctx.sequence_number if seq is None else seq,
            timestamp=self.now if ts is None else ts,
            intent_policy=intent_policy,
        )

    def transition(self, inv, result=b"ok", attest=None, tool_kp=None):
        tool_sig = crypto.sign(result, tool_kp or self.tools["search"]) if attest else None
        self.ctx = ctxmod.apply_transition(
            self.ctx,
            inv.sigma,
            inv.signing_bytes(),
            result,
            self.principal,
            self.reg,
            inv.invocation_id,
            attestation_name=attest,
            tool_sig=tool_sig,
            now=self.now,
        )
        return self.ctx


@pytest.fixture
def env():
    return Env()


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
