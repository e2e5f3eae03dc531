"""Deterministic derivations behind the stub backend.

Every derivation hashes the compact JSON encoding of ``[seed, *fields]``
(separators ``","``/``":"``, ``ensure_ascii=False``, UTF-8). The field
lists per operation are pinned in docs/PROTOCOL.md; two implementations
that agree on the material agree on every output bit.
"""

from __future__ import annotations

import hashlib
import json


def material(seed: int, fields: list) -> bytes:
    """Canonical hash input for a derivation described by ``fields``."""
    return json.dumps([seed, *fields], separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def unit_interval(seed: int, fields: list) -> float:
    """SHA-256 of the material, first 8 bytes big-endian over 2^64: uniform in [0, 1)."""
    digest = hashlib.sha256(material(seed, fields)).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def hex_digest(seed: int, fields: list) -> str:
    """SHA-256 of the material as a lowercase hexdigest."""
    return hashlib.sha256(material(seed, fields)).hexdigest()


def bucket(seed: int, fields: list, buckets: int) -> int:
    """SHA-256 of the material, first 8 bytes big-endian modulo ``buckets``."""
    digest = hashlib.sha256(material(seed, fields)).digest()
    return int.from_bytes(digest[:8], "big") % buckets


def vector(seed: int, fields: list, dim: int) -> list[float]:
    """SHAKE-256 of the material: 8 bytes per component, mapped to [-1, 1)."""
    raw = hashlib.shake_256(material(seed, fields)).digest(8 * dim)
    return [int.from_bytes(raw[8 * i : 8 * i + 8], "big") / 2**63 - 1.0 for i in range(dim)]
