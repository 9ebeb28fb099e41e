"""Policy algebra: matching, intersection, constraint merging, permissions."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (
    oracle_permissions,
    random_policy,
    random_universe,
)
from promptledger.errors import MergeRuleConflict, PatternSyntaxError
from promptledger.policy import (
    Constraints,
    Pattern,
    TOP,
    intersect,
    is_permitted,
    matches,
    most_restrictive,
    pattern_covers,
    permissions,
    policy,
    policy_from_bytes,
    policy_from_dict,
    policy_to_dict,
)


class TestPatternMatching:
    def test_denied_credential_pattern_hits_credentials_file(self):
        assert matches(Pattern("*credential*"), "credentials.txt")

    def test_star_matches_everything(self):
        assert matches(Pattern("*"), "anything")

    @pytest.mark.parametrize(
        "resource,expected",
        [("db.eu.reviews", True), ("db.eu.orders", False)],
    )
    def test_infix_star(self, resource, expected):
        # Oracle: regex translation ^db\..*\.reviews$ applied case-insensitively.
        import re

        oracle = re.compile(r"^db\..*\.reviews$", re.IGNORECASE)
        assert bool(oracle.fullmatch(resource)) is expected
        assert matches(Pattern("db.*.reviews"), resource) is expected

    def test_matching_is_case_insensitive(self):
        assert matches(Pattern("*credential*"), "CrEdEnTiAlS")
        assert matches(Pattern("DB.*"), "db.users")

    @pytest.mark.parametrize("bad", ["db.?", "[abc]*", "a]b"])
    def test_non_star_metacharacters_rejected(self, bad):
        with pytest.raises(PatternSyntaxError):
            Pattern(bad)

    @given(st.text(alphabet="abc.*", max_size=12), st.text(alphabet="abc.", max_size=12))
    @settings(max_examples=200)
    def test_matches_agrees_with_fnmatch(self, pattern_text, resource):
        import fnmatch

        assert matches(Pattern(pattern_text), resource) == fnmatch.fnmatchcase(
            resource.casefold(), pattern_text.casefold()
        )


class TestPatternCovers:
    @pytest.mark.parametrize(
        "general,specific,expected",
        [
            ("db.*", "db.reviews", True),
            ("db.*", "db.*.reviews", True),
            ("db.*.reviews", "db.*", False),
            ("*", "anything.at.all", True),
            ("*a*", "a", True),
            ("a*", "*b", False),
        ],
    )
    def test_containment(self, general, specific, expected):
        assert pattern_covers(Pattern(general), Pattern(specific)) is expected


class TestMostRestrictive:
    def test_per_field_min_or_table(self):
        c1 = Constraints(read_only=False, rate_limit=100)
        c2 = Constraints(read_only=True, rate_limit=None)
        merged = most_restrictive(c1, c2)
        assert merged.read_only is True
        assert merged.rate_limit == 100

    def test_idempotent(self):
        c = Constraints(read_only=True, rate_limit=5, max_depth=3, extensions=(("audit", "flag", True),))
        assert most_restrictive(c, c) == c

    def test_rate_limit_takes_min(self):
        merged = most_restrictive(Constraints(rate_limit=100), Constraints(rate_limit=7))
        assert merged.rate_limit == 7

    def test_numeric_min_extension(self):
        merged = most_restrictive(
            Constraints(extensions=(("quota", "min", 50),)),
            Constraints(extensions=(("quota", "min", 10),)),
        )
        assert merged.extensions == (("quota", "min", 10),)

    def test_flag_extension_is_or(self):
        merged = most_restrictive(
            Constraints(extensions=(("audit", "flag", False),)),
            Constraints(extensions=(("audit", "flag", True),)),
        )
        assert merged.extensions == (("audit", "flag", True),)

    def test_conflicting_rules_raise(self):
        with pytest.raises(MergeRuleConflict):
            most_restrictive(
                Constraints(extensions=(("audit", "flag", True),)),
                Constraints(extensions=(("audit", "min", 1),)),
            )

    def test_commutative_and_associative_over_random_inputs(self, rng):
        for _ in range(200):
            a = random_policy(rng).constraints
            b = random_policy(rng).constraints
            c = random_policy(rng).constraints
            assert most_restrictive(a, b) == most_restrictive(b, a)
            assert most_restrictive(most_restrictive(a, b), c) == most_restrictive(
                a, most_restrictive(b, c)
            )


class TestIntersect:
    def test_top_is_identity(self, rng):
        for _ in range(100):
            p = random_policy(rng)
            assert intersect(p, TOP) == p
            assert intersect(TOP, p) == p

    def test_idempotent(self, rng):
        for _ in range(100):
            p = random_policy(rng)
            assert intersect(p, p) == p

    def test_commutative(self, rng):
        for _ in range(100):
            p, q = random_policy(rng), random_policy(rng)
            assert intersect(p, q) == intersect(q, p)

    def test_associative_over_laminar_allowed_sets(self, rng):
        for _ in range(100):
            p, q, r = (random_policy(rng) for _ in range(3))
            assert intersect(intersect(p, q), r) == intersect(p, intersect(q, r))

    def test_nested_grant_survives_intersection(self):
        p1 = policy(allowed=["db.reviews"])
        p2 = policy(allowed=["db.*"], denied=["*credential*"], read_only=True)
        result = intersect(p1, p2)
        assert {a.text for a in result.allowed} == {"db.reviews"}
        assert {d.text for d in result.denied} == {"*credential*"}
        assert result.constraints.read_only is True
        # Oracle: brute-force permission enumeration over a 10-resource universe.
        universe = [
            (r, op)
            for r in (
                "db.reviews", "db.orders", "db.credentials", "db.users.pii",
                "fs.reports", "db.reviews.eu", "mail.outbound", "db.archive",
                "docs.q4", "db.rev",
            )
            for op in ("read", "write")
        ]
        got = permissions(result, universe).entries
        expected = oracle_permissions(p1, universe) & oracle_permissions(p2, universe)
        assert got == expected

    def test_denied_sets_union(self):
        p = policy(allowed=["*"], denied=["*.pii"])
        q = policy(allowed=["*"], denied=["*credential*"])
        assert {d.text for d in intersect(p, q).denied} == {"*.pii", "*credential*"}

    def test_pi_equivalence_on_random_pairs(self, rng):
        for _ in range(300):
            p, q = random_policy(rng), random_policy(rng)
            universe = random_universe(rng, max_resources=20)
            merged = permissions(intersect(p, q), universe).entries
            split = oracle_permissions(p, universe) & oracle_permissions(q, universe)
            assert merged == split


class TestPermissions:
    def test_top_policy_grants_whole_universe(self, rng):
        universe = random_universe(rng)
        assert permissions(TOP, universe).entries == set(universe)

    def test_deny_all_is_bottom(self, rng):
        universe = random_universe(rng)
        bottom = policy(allowed=["*"], denied=["*"])
        assert permissions(bottom, universe).entries == set()

    def test_read_only_filters_write_class_operations(self):
        p = policy(allowed=["db.*"], denied=["*credential*"], read_only=True)
        universe = [("db.users", "read"), ("db.users", "write"), ("db.credentials", "read")]
        assert permissions(p, universe).entries == {("db.users", "read")}

    def test_matches_oracle_on_random_policies(self, rng):
        for _ in range(300):
            p = random_policy(rng)
            universe = random_universe(rng, max_resources=15)
            assert permissions(p, universe).entries == oracle_permissions(p, universe)

    def test_sorted_iteration_is_deterministic(self, rng):
        p = random_policy(rng)
        universe = random_universe(rng)
        assert permissions(p, universe).sorted() == sorted(permissions(p, universe).entries)


class TestIsPermitted:
    def test_denied_hit_wins_over_allowed(self):
        p = policy(allowed=["*"], denied=["*credential*"])
        assert is_permitted(p, "credentials.txt", "read") is False

    def test_not_in_allowed_is_denied(self):
        p = policy(allowed=["db.*"])
        assert is_permitted(p, "fs.reports", "read") is False

    def test_allowed_clean_and_satisfying_is_permitted(self):
        p = policy(allowed=["db.*"], denied=["*credential*"], read_only=True)
        assert is_permitted(p, "db.users", "read") is True

    def test_single_pair_agrees_with_permissions(self, rng):
        for _ in range(200):
            p = random_policy(rng)
            universe = random_universe(rng, max_resources=8)
            for pair in universe:
                assert is_permitted(p, *pair) == (pair in permissions(p, universe))


class TestTheorems:
    def test_monotone_restriction_under_intersection(self, rng):
        for _ in range(300):
            p, q = random_policy(rng), random_policy(rng)
            universe = random_universe(rng, max_resources=20)
            assert permissions(intersect(p, q), universe) <= permissions(p, universe)

    def test_transitive_denial_along_chains(self, rng):
        for _ in range(200):
            chain = [random_policy(rng)]
            for _ in range(rng.randint(1, 6)):
                chain.append(intersect(chain[-1], random_policy(rng)))
            universe = random_universe(rng, max_resources=15)
            for d in chain[0].denied:
                assert all(d in level.denied for level in chain[1:])
                for resource, op in universe:
                    if matches(d, resource):
                        assert not is_permitted(chain[-1], resource, op)


class TestSerialization:
    def test_canonical_bytes_round_trip(self, rng):
        for _ in range(100):
            p = random_policy(rng)
            assert policy_from_bytes(p.canonical_bytes()) == p

    def test_dict_round_trip(self, rng):
        for _ in range(100):
            p = random_policy(rng)
            assert policy_from_dict(policy_to_dict(p)) == p

    def test_equal_policies_have_equal_bytes(self, rng):
        p = random_policy(rng)
        q = policy_from_bytes(p.canonical_bytes())
        assert p.canonical_bytes() == q.canonical_bytes()
