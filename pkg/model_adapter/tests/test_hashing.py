"""Hash derivations: material encoding, value ranges, direct recomputation."""

import hashlib
import random

from model_adapter.hashing import bucket, hex_digest, material, unit_interval, vector


def random_fields(rng: random.Random) -> list:
    pool: list = ["reward", "generate", "¿Qué?", "", "a b c", 0, 3, 0.7, 2.5]
    return [rng.choice(pool) for _ in range(rng.randint(1, 6))]


def test_material_is_compact_utf8_with_leading_seed():
    assert material(0, ["reward", "answer", "q", "a"]) == b'[0,"reward","answer","q","a"]'
    assert material(3, ["¿Qué?"]) == '[3,"¿Qué?"]'.encode("utf-8")
    assert b"\\u" not in material(3, ["¿Qué? 🐈"])
    assert b" " not in material(0, ["a", 1, 2.5])


def test_unit_interval_matches_direct_recompute():
    rng = random.Random(11)
    for _ in range(200):
        seed = rng.randint(0, 9)
        fields = random_fields(rng)
        value = unit_interval(seed, fields)
        digest = hashlib.sha256(material(seed, fields)).digest()
        assert value == int.from_bytes(digest[:8], "big") / 2**64
        assert 0.0 <= value < 1.0
    assert unit_interval(0, ["reward", "answer", "q", "a"]) == 0.48452251412958947


def test_hex_digest_is_lowercase_sha256():
    fields = ["generate", "reference", "q", 0, 0.0]
    digest = hex_digest(0, fields)
    assert digest == hashlib.sha256(material(0, fields)).hexdigest()
    assert len(digest) == 64
    assert digest == digest.lower()
    assert digest[:12] == "7c800339420d"


def test_bucket_is_first_eight_bytes_modulo():
    rng = random.Random(7)
    for _ in range(200):
        seed = rng.randint(0, 9)
        fields = random_fields(rng)
        m = rng.randint(1, 97)
        digest = hashlib.sha256(material(seed, fields)).digest()
        expected = int.from_bytes(digest[:8], "big") % m
        assert bucket(seed, fields, m) == expected
        assert 0 <= bucket(seed, fields, m) < m
    assert bucket(0, ["classify", "What color is the sky?"], 10) == 1


def test_vector_components_come_from_shake_blocks():
    fields = ["embed", 4, "q", "a"]
    values = vector(0, fields, 4)
    raw = hashlib.shake_256(material(0, fields)).digest(32)
    for i, value in enumerate(values):
        expected = int.from_bytes(raw[8 * i : 8 * i + 8], "big") / 2**63 - 1.0
        assert value == expected
    assert vector(0, ["embed", 64, "", ""], 64)[0] == 0.7440764270852207


def test_vector_ranges_and_prefix_property():
    rng = random.Random(3)
    for _ in range(50):
        seed = rng.randint(0, 9)
        fields = random_fields(rng)
        long = vector(seed, fields, 16)
        assert len(long) == 16
        assert all(-1.0 <= value < 1.0 for value in long)
        assert vector(seed, fields, 8) == long[:8]


def test_seed_leads_the_material():
    assert material(1, ["x"]).startswith(b"[1,")
    assert unit_interval(0, ["x"]) != unit_interval(1, ["x"])
