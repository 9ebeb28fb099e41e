"""Signing, hashing, canonical encoding, and the registry."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptledger import crypto
from promptledger.errors import KeyFormatError, RegistryError, UnknownCaller
from promptledger.policy import TOP, policy
from promptledger.wire import canonical_decode, canonical_encode


class TestCanonicalEncode:
    def test_empty_record_is_empty_bytes(self):
        assert canonical_encode([]) == b""

    def test_hand_computed_layout(self):
        # 4-byte BE name length | name | 4-byte BE value length | value
        assert canonical_encode([("a", b"\x01")]) == bytes.fromhex("00000001" "61" "00000001" "01")

    def test_injective_over_random_records(self, rng):
        seen: dict[bytes, tuple] = {}
        for _ in range(10_000):
            record = tuple(
                (
                    "".join(rng.choice("abcdef") for _ in range(rng.randint(0, 3))),
                    bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 4))),
                )
                for _ in range(rng.randint(0, 3))
            )
            encoded = canonical_encode(record)
            if encoded in seen:
                assert seen[encoded] == record
            seen[encoded] = record

    @given(
        st.lists(
            st.tuples(st.text(max_size=8), st.binary(max_size=16)),
            max_size=6,
        )
    )
    @settings(max_examples=300)
    def test_decode_inverts_encode(self, fields):
        assert canonical_decode(canonical_encode(fields)) == fields

    def test_golden_stability_across_runs(self):
        fields = [("text", b"analyze"), ("depth", b"\x00\x00\x00\x02"), ("", b"")]
        assert canonical_encode(fields).hex() == (
            "0000000474657874" "00000007616e616c797a65"
            "000000056465707468" "0000000400000002"
            "00000000" "00000000"
        )


class TestHash:
    def test_sha256_of_empty_string(self):
        assert crypto.sha256(b"").hex == (
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        )

    def test_deterministic(self):
        assert crypto.sha256(b"payload") == crypto.sha256(b"payload")

    def test_bit_flip_changes_digest(self, rng):
        for _ in range(100):
            payload = bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 64)))
            flipped = bytearray(payload)
            pos = rng.randrange(len(flipped))
            flipped[pos] ^= 1 << rng.randrange(8)
            assert crypto.sha256(payload) != crypto.sha256(bytes(flipped))

    def test_digest_shape(self):
        d = crypto.sha256(b"x")
        assert len(d.data) == 32
        assert len(d.hex) == 64 and d.hex == d.hex.lower()


class TestSignVerify:
    def test_round_trip(self):
        kp = crypto.KeyPair.generate()
        payload = canonical_encode([("m", b"hello")])
        assert crypto.verify(crypto.sign(payload, kp), payload, kp.verify_key)

    def test_wrong_key_fails(self):
        kp1, kp2 = crypto.KeyPair.generate(), crypto.KeyPair.generate()
        payload = b"message"
        assert not crypto.verify(crypto.sign(payload, kp1), payload, kp2.verify_key)

    def test_round_trip_over_random_payloads(self, rng):
        kp = crypto.KeyPair.from_seed(bytes(rng.getrandbits(8) for _ in range(32)))
        for _ in range(1000):
            payload = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 48)))
            assert crypto.verify(crypto.sign(payload, kp), payload, kp.verify_key)

    def test_any_single_byte_mutation_fails(self, rng):
        kp = crypto.KeyPair.from_seed(bytes([9]) * 32)
        for _ in range(100):
            payload = bytes(rng.getrandbits(8) for _ in range(rng.randint(1, 64)))
            sig = crypto.sign(payload, kp)
            if rng.random() < 0.5:
                mutated = bytearray(payload)
                mutated[rng.randrange(len(mutated))] ^= 1 << rng.randrange(8)
                assert not crypto.verify(sig, bytes(mutated), kp.verify_key)
            else:
                broken = bytearray(sig.data)
                broken[rng.randrange(len(broken))] ^= 1 << rng.randrange(8)
                assert not crypto.verify(bytes(broken), payload, kp.verify_key)

    def test_signatures_are_deterministic(self):
        kp = crypto.KeyPair.from_seed(bytes([7]) * 32)
        assert crypto.sign(b"m", kp).data == crypto.sign(b"m", kp).data

    def test_malformed_key_raises(self):
        with pytest.raises(KeyFormatError):
            crypto.verify(b"\0" * 64, b"m", b"\0" * 5)
        with pytest.raises(KeyFormatError):
            crypto.KeyPair.from_seed(b"short")
        with pytest.raises(KeyFormatError):
            crypto.KeyPair.from_seed_hex("zz")

    def test_key_id_is_hex_prefix_of_key_hash(self):
        kp = crypto.KeyPair.from_seed(bytes([4]) * 32)
        import hashlib

        assert kp.key_id == hashlib.sha256(kp.verify_key).digest()[:16].hex()
        assert len(kp.key_id) == 32


class TestRegistry:
    def test_registered_agent_lookup(self):
        reg = crypto.Registry()
        kp = crypto.KeyPair.generate()
        reg.register_agent("alice", kp.verify_key)
        assert reg.lookup("alice") == kp.verify_key

    def test_unknown_caller_raises(self):
        with pytest.raises(UnknownCaller):
            crypto.Registry().lookup("nobody")

    def test_tool_round_trip_with_policy(self):
        reg = crypto.Registry()
        kp = crypto.KeyPair.generate()
        tool_policy = policy(allowed=["db.*"], denied=["*.pii"])
        reg.register_tool("db", kp.verify_key, tool_policy)
        key, got = reg.get_resource_policy("db")
        assert key == kp.verify_key
        assert got == tool_policy
        assert reg.lookup("db") == kp.verify_key

    def test_append_only(self):
        reg = crypto.Registry()
        kp = crypto.KeyPair.generate()
        reg.register_agent("alice", kp.verify_key)
        with pytest.raises(RegistryError):
            reg.register_agent("alice", kp.verify_key)
        reg.register_tool("db", kp.verify_key, TOP)
        with pytest.raises(RegistryError):
            reg.register_tool("db", kp.verify_key, TOP)

    def test_org_policy_falls_back_to_wildcard_class(self):
        reg = crypto.Registry()
        org = policy(allowed=["*"], denied=["*.pii"])
        reg.register_org_policy("*", org)
        assert reg.org_policy_for("analyst") == org
        assert reg.org_policy_for("*") == org
        assert crypto.Registry().org_policy_for("analyst") is None
