"""promptledger: signed prompt lineage, hash-chained agent state, and a
fail-closed policy enforcement point for tool-using agents."""

from .context import (
    Attestation,
    AuthenticatedContext,
    Principal,
    apply_transition,
    check_freshness,
    create_context,
    require_attestation,
    verify_chain,
)
from .crypto import Digest, KeyPair, Registry, Signature, canonical_encode, sha256, sign, verify
from .intent import ConceptMap, ConceptOverlapScorer, ConsensusScorer, DriftScore, consensus_score, score_drift
from .pep import (
    CanonicalParameter,
    Decision,
    Invocation,
    PEPConfig,
    RateLimitStore,
    build_invocation,
    canonicalize_parameter,
    enforce_rate_limit,
    verify_and_enforce,
)
from .policy import (
    Constraints,
    Pattern,
    PermissionSet,
    Policy,
    TOP,
    intersect,
    is_permitted,
    matches,
    most_restrictive,
    permissions,
    policy,
)
from .prompts import AuthenticatedPrompt, create_root, derive, verify_lineage

__version__ = "0.1.0"
