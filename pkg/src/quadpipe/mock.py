"""Built-in deterministic mock worker.

Every output is a pure function of (seed, op, request fields) via a
64-bit stable hash; no model weights, no state. The hash construction is
pinned in docs/PROTOCOL.md so protocol-conformant stubs can reproduce it
bit-for-bit: the material is the compact JSON array ``[seed, *fields]``
encoded UTF-8, hashed with SHA-256 (SHAKE-256 for embedding vectors), and
the leading 8 bytes map to a uniform value in [0, 1).
"""

from __future__ import annotations

import hashlib
import json
import sys

from .wire import (
    WorkerError,
    dumps_wire,
    handshake_message,
    serve_lines,
    serve_tcp,
)

MOCK_CAPABILITIES = ["reward", "generate", "embed", "classify"]
MOCK_BATCH_LIMIT = 64
MOCK_TAXONOMY_LEAVES = 10
DEFAULT_EMBED_DIM = 64


def _material(seed: int, fields: list) -> bytes:
    return json.dumps([seed, *fields], ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def stable_unit(seed: int, fields: list) -> float:
    """Uniform-in-[0,1) value from the 64-bit stable hash of (seed, fields)."""
    digest = hashlib.sha256(_material(seed, fields)).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def stable_hex(seed: int, fields: list) -> str:
    return hashlib.sha256(_material(seed, fields)).hexdigest()


def stable_bucket(seed: int, fields: list, buckets: int) -> int:
    digest = hashlib.sha256(_material(seed, fields)).digest()
    return int.from_bytes(digest[:8], "big") % buckets


def stable_vector(seed: int, fields: list, dim: int) -> list[float]:
    """Raw (unnormalized) embedding: dim values in [-1, 1) from SHAKE-256."""
    stream = hashlib.shake_256(_material(seed, fields)).digest(8 * dim)
    return [
        int.from_bytes(stream[8 * j: 8 * j + 8], "big") / 2.0**64 * 2.0 - 1.0
        for j in range(dim)
    ]


def _media_uris(payload: dict) -> list[str]:
    media = payload.get("media") or []
    return [m.get("uri", "") for m in media if isinstance(m, dict)]


class MockWorker:
    """In-process worker; also serves the same handler over stdio or TCP."""

    def __init__(self, seed: int, dim: int = DEFAULT_EMBED_DIM, batch_limit: int = MOCK_BATCH_LIMIT):
        self.seed = int(seed)
        self.dim = int(dim)
        self.batch_limit = batch_limit
        self.model_id = f"mock-{self.seed}"
        self.capabilities = tuple(MOCK_CAPABILITIES)
        self.calls = 0

    def handshake(self) -> dict:
        return handshake_message(MOCK_CAPABILITIES, self.batch_limit, self.model_id)

    def call(self, op: str, payload: dict) -> dict:
        self.calls += 1
        if op == "reward":
            return self._reward(payload)
        if op == "generate":
            return self._generate(payload)
        if op == "embed":
            return self._embed(payload)
        if op == "classify":
            return self._classify(payload)
        raise WorkerError("bad-request", f"unknown op {op!r}")

    def _require(self, payload: dict, key: str) -> str:
        value = payload.get(key)
        if not isinstance(value, str) or not value:
            raise WorkerError("bad-request", f"'{key}' must be a nonempty string")
        return value

    def _string(self, payload: dict, key: str) -> str:
        value = payload.get(key, "")
        if not isinstance(value, str):
            raise WorkerError("bad-request", f"'{key}' must be a string")
        return value

    def _reward(self, payload: dict) -> dict:
        question = self._require(payload, "question")
        answer = self._require(payload, "answer")
        variant = payload.get("variant", "answer")
        fields = ["reward", variant, question, answer, *_media_uris(payload)]
        return {"score": stable_unit(self.seed, fields)}

    def _generate(self, payload: dict) -> dict:
        # Synthesis free-runs from media plus cues, so an empty question
        # is legitimate here (unlike reward/classify).
        question = self._string(payload, "question")
        mode = payload.get("mode", "reference")
        count = payload.get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise WorkerError("bad-request", "'count' must be a positive integer")
        temperature = float(payload.get("temperature", 0.0))
        cues = payload.get("cues") or []
        uris = _media_uris(payload)
        answers = []
        for index in range(count):
            fields = ["generate", mode, question, index, temperature, *cues, *uris]
            hexd = stable_hex(self.seed, fields)
            if mode == "synthesis":
                text = dumps_wire({
                    "question": f"mock question {hexd[12:24]}",
                    "answer": f"mock answer {hexd[:12]}",
                })
            else:
                text = f"mock answer {hexd[:12]}"
            answers.append({"text": text})
        return {"answers": answers}

    def _embed(self, payload: dict) -> dict:
        question = self._string(payload, "question")
        answer = self._string(payload, "answer")
        fields = ["embed", self.dim, question, answer, *_media_uris(payload)]
        return {"vector": stable_vector(self.seed, fields, self.dim)}

    def _classify(self, payload: dict) -> dict:
        question = self._require(payload, "question")
        bucket = stable_bucket(self.seed, ["classify", question], MOCK_TAXONOMY_LEAVES)
        return {"levels": [f"cap-{bucket}"]}


def serve_stdio(worker: MockWorker, infile=None, outfile=None) -> None:
    infile = infile if infile is not None else sys.stdin
    outfile = outfile if outfile is not None else sys.stdout
    outfile.write(dumps_wire(worker.handshake()) + "\n")
    outfile.flush()
    serve_lines(worker.call, infile, outfile)


def serve_tcp_worker(worker: MockWorker, host: str, port: int, *, ready_callback=None) -> None:
    serve_tcp(worker.call, worker.handshake(), host, port, ready_callback=ready_callback)
