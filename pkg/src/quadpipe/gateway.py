"""Single abstraction over all model calls.

Stages never talk to workers directly: the gateway owns role binding
(reward / generator / reference / embedder / classifier / ocl_refs),
request construction, retries, embedding normalization, and the
vision-ablation hygiene rule (a vision_ablated generate request never
carries media). Results are deterministic whenever the backing workers
are; with the built-in mock every operation is a pure function of
(seed, request payload).
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CapabilityLabel, MediaRef, Sample
from .mock import MockWorker
from .wire import WireWorkerClient, WorkerError

SCORE_VARIANTS = ("answer", "vision_ablated", "reference", "chosen", "rejected")
GENERATE_MODES = ("vision_ablated", "reference", "candidate", "synthesis")

DEFAULT_TIMEOUT = 120.0
DEFAULT_MAX_RETRIES = 3


class GatewayConfigError(RuntimeError):
    """Misconfiguration (missing role, missing capability); not retryable."""


class GatewayFault(RuntimeError):
    """Terminal per-request failure; callers quarantine the sample."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


def candidate_variant(index: int) -> str:
    return f"candidate:{index}"


@dataclass(frozen=True)
class SampleView:
    """The (media?, question, answer) slice of a sample an op works on."""

    sample_id: str
    question: str
    answer: str = ""
    media: tuple[MediaRef, ...] = ()

    @classmethod
    def of(cls, sample: Sample, answer: str | None = None, *, strip_media: bool = False) -> "SampleView":
        return cls(
            sample_id=sample.id,
            question=sample.question,
            answer=sample.answer if answer is None else answer,
            media=() if strip_media else sample.media,
        )


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    variant: str
    score: float


@dataclass(frozen=True)
class GeneratedAnswer:
    sample_id: str
    variant: str
    text: str
    temperature: float
    producer: str


@dataclass(frozen=True)
class EmbeddingVector:
    sample_id: str
    dim: int
    values: np.ndarray
    model_id: str


@dataclass(frozen=True)
class WorkerEndpoint:
    """Declarative worker binding from the pipeline config."""

    transport: str  # mock | subprocess-stdio | tcp
    address: str = ""
    command: str = ""
    seed: int | None = None
    dim: int | None = None

    def build(self, default_seed: int):
        if self.transport == "mock":
            seed = self.seed if self.seed is not None else default_seed
            return MockWorker(seed=seed, dim=self.dim or 64)
        if self.transport == "subprocess-stdio":
            if not self.command:
                raise GatewayConfigError("subprocess-stdio worker needs a command")
            return WireWorker(WireWorkerClient.spawn(self.command))
        if self.transport == "tcp":
            host, _, port = self.address.rpartition(":")
            if not host or not port.isdigit():
                raise GatewayConfigError(
                    f"tcp worker needs an address HOST:PORT, got '{self.address}'")
            return WireWorker(WireWorkerClient.connect(host, int(port)))
        raise GatewayConfigError(f"unknown worker transport '{self.transport}'")


class WireWorker:
    """Adapts a WireWorkerClient to the in-process worker interface."""

    def __init__(self, client: WireWorkerClient, timeout: float = DEFAULT_TIMEOUT):
        self._client = client
        self._timeout = timeout
        self.model_id = client.model_id
        self.capabilities = client.capabilities
        self.batch_limit = client.batch_limit
        self.calls = 0

    def call(self, op: str, payload: dict) -> dict:
        self.calls += 1
        return self._client.call(op, payload, timeout=self._timeout)

    def close(self) -> None:
        self._client.close()


def payload_digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResultCache:
    """Persisted result cache keyed by (model_id, op, payload digest).

    Flat JSONL file, last entry wins on load; corrupt lines are skipped so a
    damaged entry is simply recomputed and re-appended.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], dict] = {}
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fin:
                for raw in fin:
                    try:
                        obj = json.loads(raw)
                        key = (obj["model_id"], obj["op"], obj["payload_digest"])
                        self._entries[key] = obj["result"]
                    except (json.JSONDecodeError, KeyError, TypeError):
                        continue
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a", encoding="utf-8")

    def get(self, model_id: str, op: str, digest: str) -> dict | None:
        result = self._entries.get((model_id, op, digest))
        if result is None:
            self.misses += 1
        else:
            self.hits += 1
        return result

    def put(self, model_id: str, op: str, digest: str, result: dict) -> None:
        self._entries[(model_id, op, digest)] = result
        if self._fh is not None:
            self._fh.write(json.dumps(
                {"model_id": model_id, "op": op, "payload_digest": digest, "result": result},
                ensure_ascii=False) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class CachingWorker:
    """Wraps a worker with a ResultCache; cache hits never reach the worker."""

    def __init__(self, inner, cache: ResultCache):
        self._inner = inner
        self._cache = cache
        self.model_id = inner.model_id
        self.capabilities = inner.capabilities
        self.batch_limit = inner.batch_limit

    @property
    def calls(self) -> int:
        return self._inner.calls

    def call(self, op: str, payload: dict) -> dict:
        digest = payload_digest(payload)
        cached = self._cache.get(self.model_id, op, digest)
        if cached is not None:
            return cached
        result = self._inner.call(op, payload)
        self._cache.put(self.model_id, op, digest, result)
        return result

    def close(self) -> None:
        if hasattr(self._inner, "close"):
            self._inner.close()


_ROLE_CAPABILITY = {
    "reward": "reward",
    "generator": "generate",
    "reference": "generate",
    "embedder": "embed",
    "classifier": "classify",
}


class ScorerGateway:
    def __init__(
        self,
        workers: dict[str, object],
        ocl_refs: Sequence[object] = (),
        *,
        max_retries: int = DEFAULT_MAX_RETRIES,
        retry_base_delay: float = 0.5,
        record_transcript: bool = False,
    ):
        self._workers = dict(workers)
        self.ocl_refs = list(ocl_refs)
        self._max_retries = max_retries
        self._retry_base_delay = retry_base_delay
        self.transcript: list[dict] | None = [] if record_transcript else None
        self._embed_session: tuple[int, str] | None = None  # (dim, model_id)

    @classmethod
    def with_mock(cls, seed: int, *, dim: int = 64, ocl_ref_count: int = 0, **kw) -> "ScorerGateway":
        """All roles bound to one in-process mock; ocl refs get offset seeds."""
        shared = MockWorker(seed=seed, dim=dim)
        workers = {role: shared for role in _ROLE_CAPABILITY}
        refs = [MockWorker(seed=seed + k + 1, dim=dim) for k in range(ocl_ref_count)]
        return cls(workers, ocl_refs=refs, **kw)

    def worker(self, role: str):
        try:
            w = self._workers[role]
        except KeyError:
            raise GatewayConfigError(f"no worker bound for role '{role}'") from None
        needed = _ROLE_CAPABILITY.get(role)
        if needed is not None and needed not in w.capabilities:
            raise GatewayConfigError(f"worker '{w.model_id}' lacks capability '{needed}' for role '{role}'")
        return w

    def all_workers(self) -> list[object]:
        seen: list[object] = []
        for w in list(self._workers.values()) + self.ocl_refs:
            if all(w is not s for s in seen):
                seen.append(w)
        return seen

    def worker_calls(self) -> int:
        return sum(w.calls for w in self.all_workers())

    def _dispatch(self, worker, op: str, payload: dict) -> dict:
        if self.transcript is not None:
            self.transcript.append({"model_id": worker.model_id, "op": op, "payload": payload})
        attempt = 0
        while True:
            try:
                return worker.call(op, payload)
            except WorkerError as exc:
                if not exc.retryable or attempt >= self._max_retries:
                    raise GatewayFault(exc.code, str(exc)) from exc
                delay = self._retry_base_delay * (2 ** attempt) * (0.5 + random.random())
                time.sleep(delay)
                attempt += 1

    @staticmethod
    def _media_payload(media: Iterable[MediaRef]) -> list[dict] | None:
        entries = [m.to_json() for m in media if m.kind != "none"]
        return entries or None

    # -- operations ---------------------------------------------------------

    def score(self, view: SampleView, variant: str = "answer", *, role: str = "reward") -> ScoreRecord:
        if not view.answer:
            raise ValueError(f"score requires a nonempty answer (sample {view.sample_id})")
        payload: dict = {"question": view.question, "answer": view.answer, "variant": variant}
        media = self._media_payload(view.media)
        if media:
            payload["media"] = media
        result = self._dispatch(self.worker(role), "reward", payload)
        score = result.get("score")
        if not isinstance(score, (int, float)) or not math.isfinite(score):
            raise GatewayFault("worker-fault", f"non-finite score {score!r} for {view.sample_id}")
        return ScoreRecord(sample_id=view.sample_id, variant=variant, score=float(score))

    def generate(
        self,
        view: SampleView,
        mode: str,
        *,
        count: int = 1,
        temperature: float = 0.0,
        cues: Sequence[str] = (),
        worker=None,
    ) -> list[GeneratedAnswer]:
        if mode not in GENERATE_MODES:
            raise ValueError(f"unknown generate mode '{mode}'")
        if mode in ("vision_ablated", "reference"):
            count = 1  # one deterministic answer per model
        elif count < 1:
            raise ValueError(f"{mode} mode requires count >= 1")
        if worker is None:
            worker = self.worker("reference" if mode == "reference" else "generator")
        elif "generate" not in worker.capabilities:
            raise GatewayConfigError(f"worker '{worker.model_id}' lacks capability 'generate'")
        payload: dict = {
            "question": view.question,
            "mode": mode,
            "count": count,
            "temperature": float(temperature),
        }
        # Vision-ablation hygiene: the dispatched request never carries media.
        if mode != "vision_ablated":
            media = self._media_payload(view.media)
            if media:
                payload["media"] = media
        if cues:
            payload["cues"] = list(cues)
        result = self._dispatch(worker, "generate", payload)
        answers = result.get("answers")
        if not isinstance(answers, list) or len(answers) != count:
            raise GatewayFault("worker-fault",
                               f"expected {count} answers, got {answers!r} for {view.sample_id}")
        out = []
        for index, entry in enumerate(answers):
            text = entry.get("text") if isinstance(entry, dict) else None
            if not text:
                raise GatewayFault("worker-fault", f"empty generated text for {view.sample_id}")
            if mode == "candidate":
                variant = candidate_variant(index)
            elif mode == "synthesis":
                variant = "answer"
            else:
                variant = mode
            out.append(GeneratedAnswer(
                sample_id=view.sample_id, variant=variant, text=text,
                temperature=float(temperature), producer=worker.model_id,
            ))
        return out

    def embed(self, view: SampleView) -> EmbeddingVector:
        worker = self.worker("embedder")
        payload: dict = {"question": view.question, "answer": view.answer}
        media = self._media_payload(view.media)
        if media:
            payload["media"] = media
        result = self._dispatch(worker, "embed", payload)
        raw = result.get("vector")
        if not isinstance(raw, list) or not raw:
            raise GatewayFault("worker-fault", f"bad embedding vector for {view.sample_id}")
        values = np.asarray(raw, dtype=np.float64)
        norm = float(np.linalg.norm(values))
        if not math.isfinite(norm) or norm == 0.0:
            raise GatewayFault("worker-fault", f"degenerate embedding norm for {view.sample_id}")
        values = values / norm
        dim = values.shape[0]
        if self._embed_session is None:
            self._embed_session = (dim, worker.model_id)
        elif self._embed_session != (dim, worker.model_id):
            raise GatewayFault(
                "dim-mismatch",
                f"embedding session is dim={self._embed_session[0]} model={self._embed_session[1]}, "
                f"got dim={dim} model={worker.model_id}",
            )
        return EmbeddingVector(sample_id=view.sample_id, dim=dim, values=values, model_id=worker.model_id)

    def classify(self, question: str, *, sample_id: str = "") -> CapabilityLabel:
        worker = self.worker("classifier")
        result = self._dispatch(worker, "classify", {"question": question})
        levels = result.get("levels")
        if not isinstance(levels, list) or not levels or not all(isinstance(l, str) for l in levels):
            raise GatewayFault("worker-fault", f"bad capability levels {levels!r} for {sample_id or question!r}")
        label = CapabilityLabel(levels=tuple(levels))
        if not label.leaf:
            raise GatewayFault("worker-fault", "empty capability leaf")
        return label

    def close(self) -> None:
        for w in self.all_workers():
            if hasattr(w, "close"):
                w.close()


def with_cache(gateway: ScorerGateway, cache: ResultCache) -> ScorerGateway:
    """Return a gateway whose workers are wrapped with the shared cache."""
    wrapped: dict[object, CachingWorker] = {}

    def wrap(worker):
        key = id(worker)
        if key not in wrapped:
            wrapped[key] = CachingWorker(worker, cache)
        return wrapped[key]

    out = ScorerGateway(
        {role: wrap(w) for role, w in gateway._workers.items()},
        ocl_refs=[wrap(w) for w in gateway.ocl_refs],
        max_retries=gateway._max_retries,
        retry_base_delay=gateway._retry_base_delay,
        record_transcript=gateway.transcript is not None,
    )
    return out
