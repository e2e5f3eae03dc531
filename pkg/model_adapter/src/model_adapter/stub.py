"""Deterministic stub backend.

Outputs are pure functions of ``(seed, payload)`` via the derivations in
docs/PROTOCOL.md, so a transcript served by this backend is
byte-identical to one served by any other conforming worker at the same
seed. Validation applies exactly the documented rules; every other
payload value, expected or not, is hashed as-is rather than rejected.
"""

from __future__ import annotations

import json

from model_adapter.hashing import bucket, hex_digest, unit_interval, vector
from model_adapter.server import BadRequest

CAPABILITIES = ("reward", "generate", "embed", "classify")
DEFAULT_DIM = 64
TAXONOMY_LEAVES = 10


def _require_text(payload: dict, key: str) -> str:
    value = payload.get(key)
    if not isinstance(value, str) or not value:
        raise BadRequest(f"{key!r} must be a nonempty string")
    return value


def _optional_text(payload: dict, key: str) -> str:
    value = payload.get(key, "")
    if not isinstance(value, str):
        raise BadRequest(f"{key!r} must be a string")
    return value


def _media_uris(payload: dict) -> list:
    """URI strings from the media field, in request order.

    A non-list media value counts as absent and non-object entries are
    skipped; an object entry without a uri contributes the empty string.
    """
    media = payload.get("media")
    if not isinstance(media, list):
        return []
    return [entry.get("uri", "") for entry in media if isinstance(entry, dict)]


class StubBackend:
    """Backend whose responses depend only on the seed and the request payload."""

    capabilities = CAPABILITIES

    def __init__(self, seed: int = 0, dim: int = DEFAULT_DIM) -> None:
        self.seed = seed
        self.dim = dim

    def handle(self, op: str, payload: dict) -> dict:
        handler = getattr(self, "_op_" + op)
        return handler(payload)

    def _op_reward(self, payload: dict) -> dict:
        question = _require_text(payload, "question")
        answer = _require_text(payload, "answer")
        variant = payload.get("variant", "answer")
        fields = ["reward", variant, question, answer, *_media_uris(payload)]
        return {"score": unit_interval(self.seed, fields)}

    def _op_generate(self, payload: dict) -> dict:
        question = _optional_text(payload, "question")
        mode = payload.get("mode", "reference")
        count = payload.get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise BadRequest("'count' must be a positive integer")
        temperature = float(payload.get("temperature", 0.0))
        cues = payload.get("cues") or []
        uris = _media_uris(payload)
        answers = []
        for index in range(count):
            digest = hex_digest(self.seed, ["generate", mode, question, index, temperature, *cues, *uris])
            answer = "mock answer " + digest[:12]
            if mode == "synthesis":
                text = json.dumps(
                    {"question": "mock question " + digest[12:24], "answer": answer},
                    separators=(",", ":"),
                    ensure_ascii=False,
                )
            else:
                text = answer
            answers.append({"text": text})
        return {"answers": answers}

    def _op_embed(self, payload: dict) -> dict:
        question = _optional_text(payload, "question")
        answer = _optional_text(payload, "answer")
        fields = ["embed", self.dim, question, answer, *_media_uris(payload)]
        return {"vector": vector(self.seed, fields, self.dim)}

    def _op_classify(self, payload: dict) -> dict:
        question = _require_text(payload, "question")
        leaf = bucket(self.seed, ["classify", question], TAXONOMY_LEAVES)
        return {"levels": [f"cap-{leaf}"]}
