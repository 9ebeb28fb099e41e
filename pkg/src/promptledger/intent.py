"""Advisory drift scoring: does a derived operation introduce a denied
concept that the original request never mentioned?

The default scorer is deterministic lexical concept overlap.  It implements
the same interface any richer model-backed scorer would: given the preserved
root text and the derived text, produce a score in [0, 1] plus the concepts
that drove it.  A score is flagged when it exceeds the configured threshold.
This layer is advisory by design; it runs only after the cryptographic
checks and degrades open when no concept map is configured.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Protocol, Sequence

import yaml

from .textnorm import fold_text

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class DriftScore:
    value: float
    flagged_concepts: tuple[str, ...]
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("drift score must lie in [0, 1]")

    @property
    def flagged(self) -> bool:
        return self.value > self.threshold


@dataclass(frozen=True)
class ConceptMap:
    """Concept name -> folded synonym strings."""

    entries: tuple[tuple[str, frozenset[str]], ...]

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable[str]]) -> "ConceptMap":
        entries = []
        for concept, synonyms in sorted((data or {}).items()):
            folded = frozenset(fold_text(s) for s in synonyms)
            if not folded:
                raise ValueError(f"concept {concept!r} has an empty synonym set")
            entries.append((concept, folded))
        return cls(entries=tuple(entries))

    @classmethod
    def from_yaml(cls, text: str) -> "ConceptMap":
        return cls.from_dict(yaml.safe_load(text) or {})

    def without_synonym(self, synonym: str) -> "ConceptMap":
        """Copy with one synonym removed everywhere (empty concepts dropped)."""
        folded = fold_text(synonym)
        entries = []
        for concept, synonyms in self.entries:
            remaining = frozenset(s for s in synonyms if s != folded)
            if remaining:
                entries.append((concept, remaining))
        return ConceptMap(entries=tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)


@lru_cache(maxsize=1)
def default_concepts() -> ConceptMap:
    text = resources.files("promptledger.data").joinpath("concepts.yaml").read_text()
    return ConceptMap.from_yaml(text)


def _presence(synonyms: frozenset[str], folded_text: str) -> int:
    return 1 if any(s in folded_text for s in synonyms) else 0


def score_drift(
    root_text: str,
    derived_text: str,
    concepts: ConceptMap,
    threshold: float = DEFAULT_THRESHOLD,
) -> DriftScore:
    """Max over concepts of presence(derived) * (1 - presence(root)).

    A concept already anchored in the root contributes nothing: asking about
    passwords inside a password-audit workflow is zero drift.  An empty
    concept map scores 0 with no flags (the layer degrades open; the
    cryptographic layers still stand).
    """
    folded_root = fold_text(root_text)
    folded_derived = fold_text(derived_text)
    value = 0.0
    flagged: list[str] = []
    for concept, synonyms in concepts.entries:
        introduced = _presence(synonyms, folded_derived) * (1 - _presence(synonyms, folded_root))
        if introduced:
            value = 1.0
            flagged.append(concept)
    return DriftScore(value=value, flagged_concepts=tuple(flagged), threshold=threshold)


def consensus_score(scores: Sequence[DriftScore], quorum: int) -> bool:
    """True iff at least `quorum` scores exceed their thresholds."""
    if not scores:
        return False
    return sum(1 for s in scores if s.flagged) >= quorum


class Scorer(Protocol):
    def score(self, root_text: str, derived_text: str) -> DriftScore: ...


@dataclass(frozen=True)
class ConceptOverlapScorer:
    """Default deterministic scorer over a single concept map."""

    concepts: ConceptMap
    threshold: float = DEFAULT_THRESHOLD

    def score(self, root_text: str, derived_text: str) -> DriftScore:
        return score_drift(root_text, derived_text, self.concepts, self.threshold)


@dataclass(frozen=True)
class ConsensusScorer:
    """Panel scorer: value is the fraction of member scorers that flag.

    Mirrors a multi-validator setup behind the single-scorer interface; with
    a 0.5 threshold, two of three members flagging trips the panel.
    """

    members: tuple[Scorer, ...]
    quorum: int
    threshold: float = DEFAULT_THRESHOLD

    def score(self, root_text: str, derived_text: str) -> DriftScore:
        results = [m.score(root_text, derived_text) for m in self.members]
        if not results:
            return DriftScore(value=0.0, flagged_concepts=(), threshold=self.threshold)
        hits = [r for r in results if r.flagged]
        value = 1.0 if consensus_score(results, self.quorum) else 0.0
        flagged: list[str] = []
        for r in hits:
            for concept in r.flagged_concepts:
                if concept not in flagged:
                    flagged.append(concept)
        return DriftScore(value=value, flagged_concepts=tuple(flagged), threshold=self.threshold)
