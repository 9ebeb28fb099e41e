"""Drift scoring: concept overlap, anchoring, consensus, determinism."""

from __future__ import annotations

import pytest

from promptledger.intent import (
    ConceptMap,
    ConceptOverlapScorer,
    ConsensusScorer,
    DriftScore,
    consensus_score,
    default_concepts,
    score_drift,
)


@pytest.fixture
def concepts():
    return default_concepts()


class TestScoreDrift:
    def test_introduced_credential_concept_scores_one(self, concepts):
        score = score_drift(
            "analyze sales data", "retrieve authentication credentials", concepts
        )
        assert score.value == 1.0
        assert "credential" in score.flagged_concepts
        assert score.flagged

    def test_identical_texts_score_zero(self, concepts):
        text = "summarize the quarterly report"
        score = score_drift(text, text, concepts)
        assert score.value == 0.0
        assert score.flagged_concepts == ()

    def test_concept_anchored_in_root_scores_zero(self, concepts):
        # Direct evaluation of presence(derived) * (1 - presence(root)):
        # both texts contain the concept, so the product is zero.
        score = score_drift(
            "audit password storage practices", "list password storage methods", concepts
        )
        assert score.value == 0.0

    def test_empty_concept_map_degrades_open(self):
        empty = ConceptMap(entries=())
        score = score_drift("a", "b", empty)
        assert score.value == 0.0
        assert score.flagged_concepts == ()

    def test_deterministic_across_calls(self, concepts):
        pairs = [
            ("analyze sales", "export the api tokens"),
            ("write release notes", "collect personal data exports"),
        ]
        for root, derived in pairs:
            first = score_drift(root, derived, concepts)
            for _ in range(5):
                assert score_drift(root, derived, concepts) == first

    def test_adding_synonym_never_decreases_score(self):
        base = ConceptMap.from_dict({"credential": ["password"]})
        richer = ConceptMap.from_dict({"credential": ["password", "vault entry"]})
        root = "plan the sprint"
        derived = "fetch the vault entry for deployment"
        assert score_drift(root, derived, base).value <= score_drift(root, derived, richer).value

    def test_obfuscated_synonym_still_detected(self, concepts):
        # Same folding pipeline as the enforcement point: lookalikes collapse.
        score = score_drift("plan the sprint", "fetch the pаssword list", concepts)
        assert score.value == 1.0

    def test_threshold_controls_flagging(self, concepts):
        score = score_drift("analyze sales", "collect api tokens", concepts, threshold=1.0)
        assert score.value == 1.0
        assert not score.flagged  # strict > comparison


class TestConsensus:
    def _score(self, value, threshold=0.5):
        return DriftScore(value=value, flagged_concepts=(), threshold=threshold)

    def test_two_of_three_reaches_quorum(self):
        scores = [self._score(1.0), self._score(1.0), self._score(0.0)]
        assert consensus_score(scores, quorum=2) is True

    def test_zero_of_three_does_not(self):
        scores = [self._score(0.0)] * 3
        assert consensus_score(scores, quorum=2) is False

    def test_empty_panel_is_false(self):
        assert consensus_score([], quorum=0) is False

    def test_three_identical_scorers_match_single(self, concepts):
        single = ConceptOverlapScorer(concepts=concepts)
        panel = ConsensusScorer(members=(single, single, single), quorum=2)
        for root, derived in [
            ("analyze sales", "retrieve authentication credentials"),
            ("audit password storage", "list password storage methods"),
            ("plan offsite", "book the venue"),
        ]:
            assert panel.score(root, derived).flagged == single.score(root, derived).flagged

    def test_staggered_panel_flags_on_majority(self, concepts):
        full = ConceptOverlapScorer(concepts=concepts)
        reduced = ConceptOverlapScorer(concepts=concepts.without_synonym("authentication"))
        panel = ConsensusScorer(members=(full, full, reduced), quorum=2)
        score = panel.score(
            "investigate sign-in failures", "debug why authentication always succeeds"
        )
        assert score.flagged
        minority = ConsensusScorer(members=(reduced, reduced, full), quorum=2)
        assert not minority.score(
            "investigate sign-in failures", "debug why authentication always succeeds"
        ).flagged


class TestConceptMap:
    def test_from_dict_folds_and_sorts(self):
        cm = ConceptMap.from_dict({"b": ["Xy"], "a": ["QQ"]})
        assert [name for name, _ in cm.entries] == ["a", "b"]
        assert cm.entries[0][1] == frozenset({"qq"})

    def test_empty_synonym_set_rejected(self):
        with pytest.raises(ValueError):
            ConceptMap.from_dict({"a": []})

    def test_without_synonym_drops_empty_concepts(self):
        cm = ConceptMap.from_dict({"a": ["only"], "b": ["only", "more"]})
        reduced = cm.without_synonym("only")
        assert [name for name, _ in reduced.entries] == ["b"]

    def test_shipped_map_covers_the_drift_corpus_concepts(self, concepts):
        names = {name for name, _ in concepts.entries}
        assert {"credential", "pii", "secret", "key_material"} <= names

    def test_score_bounds_validated(self):
        with pytest.raises(ValueError):
            DriftScore(value=1.5, flagged_concepts=())
