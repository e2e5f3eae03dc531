"""Corpus data model and on-disk formats.

A corpus snapshot is a line-delimited JSON file, one sample per line, with
media stored out-of-line by uri. Stage outputs are written in canonical
order (sorted by id) so downstream results never depend on worker
scheduling; ``load_snapshot``/``write_snapshot`` themselves preserve order.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Iterator

MEDIA_KINDS = ("image", "video", "none")
AUDIT_DECISIONS = ("kept", "dropped", "replicated", "backfilled")


class CorpusError(ValueError):
    """Base class for corpus validation and format errors."""


class CorpusFormatError(CorpusError):
    """A malformed record; carries the line number and offending field."""

    def __init__(self, message: str, line: int | None = None, fieldname: str | None = None):
        self.line = line
        self.field = fieldname
        where = []
        if line is not None:
            where.append(f"line {line}")
        if fieldname is not None:
            where.append(f"field '{fieldname}'")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class DuplicateSampleIdError(CorpusError):
    def __init__(self, sample_id: str, line: int | None = None):
        self.sample_id = sample_id
        self.line = line
        at = f" at line {line}" if line is not None else ""
        super().__init__(f"duplicate sample id '{sample_id}'{at}")


@dataclass(frozen=True)
class MediaRef:
    kind: str
    uri: str = ""
    fps: float | None = None
    max_frames: int | None = None

    def __post_init__(self):
        if self.kind not in MEDIA_KINDS:
            raise CorpusFormatError(f"unknown media kind '{self.kind}'", fieldname="kind")
        if self.kind in ("image", "video") and not self.uri:
            raise CorpusFormatError(f"media kind '{self.kind}' requires a nonempty uri", fieldname="uri")
        if self.kind != "video" and (self.fps is not None or self.max_frames is not None):
            raise CorpusFormatError("frame policy is only valid for video media", fieldname="fps")
        if self.fps is not None and self.fps <= 0:
            raise CorpusFormatError("fps must be positive", fieldname="fps")
        if self.max_frames is not None and self.max_frames < 1:
            raise CorpusFormatError("max_frames must be >= 1", fieldname="max_frames")

    def to_json(self) -> dict:
        out: dict = {"kind": self.kind, "uri": self.uri}
        if self.fps is not None:
            out["fps"] = self.fps
        if self.max_frames is not None:
            out["max_frames"] = self.max_frames
        return out

    @classmethod
    def from_json(cls, obj: dict, line: int | None = None) -> "MediaRef":
        if not isinstance(obj, dict):
            raise CorpusFormatError("media entry must be an object", line, "media")
        try:
            return cls(
                kind=obj.get("kind", ""),
                uri=obj.get("uri", ""),
                fps=obj.get("fps"),
                max_frames=obj.get("max_frames"),
            )
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), line, exc.field) from exc


@dataclass(frozen=True)
class CapabilityLabel:
    """Hierarchical capability label, L1 (coarsest) to L4 (finest)."""

    levels: tuple[str, ...]

    def __post_init__(self):
        levels = tuple(l for l in self.levels if l)
        if not levels or len(levels) > 4:
            raise CorpusFormatError("capability label needs 1..4 nonempty levels", fieldname="capability")
        object.__setattr__(self, "levels", levels)

    @property
    def leaf(self) -> str:
        return self.levels[-1]

    def to_json(self) -> dict:
        return {f"l{i + 1}": level for i, level in enumerate(self.levels)}

    @classmethod
    def from_json(cls, obj: dict, line: int | None = None) -> "CapabilityLabel":
        if not isinstance(obj, dict):
            raise CorpusFormatError("capability must be an object", line, "capability")
        levels = tuple(str(obj[k]) for k in ("l1", "l2", "l3", "l4") if obj.get(k))
        if not levels:
            raise CorpusFormatError("capability must carry at least one level", line, "capability")
        return cls(levels=levels)


@dataclass(frozen=True)
class Sample:
    """One curation unit: media references plus a question/answer pair."""

    id: str
    question: str
    answer: str = ""
    media: tuple[MediaRef, ...] = ()
    capability: CapabilityLabel | None = None
    scenario: str | None = None
    source: str | None = None

    def __post_init__(self):
        if not self.id:
            raise CorpusFormatError("sample id must be nonempty", fieldname="id")
        if not self.question:
            raise CorpusFormatError("question must be nonempty", fieldname="question")
        object.__setattr__(self, "media", tuple(self.media))

    @property
    def curation_eligible(self) -> bool:
        return bool(self.question) and bool(self.answer)

    @property
    def media_uris(self) -> tuple[str, ...]:
        return tuple(m.uri for m in self.media if m.kind != "none")

    @property
    def modality(self) -> str:
        """single-image, multi-image, video, or pure-text (any video wins)."""
        kinds = [m.kind for m in self.media if m.kind != "none"]
        if any(k == "video" for k in kinds):
            return "video"
        images = sum(1 for k in kinds if k == "image")
        if images == 0:
            return "pure-text"
        return "single-image" if images == 1 else "multi-image"

    def with_capability(self, label: CapabilityLabel) -> "Sample":
        return replace(self, capability=label)

    def to_json(self) -> dict:
        out: dict = {"id": self.id, "media": [m.to_json() for m in self.media],
                     "question": self.question, "answer": self.answer}
        if self.capability is not None:
            out["capability"] = self.capability.to_json()
        if self.scenario is not None:
            out["scenario"] = self.scenario
        if self.source is not None:
            out["source"] = self.source
        return out

    @classmethod
    def from_json(cls, obj: dict, line: int | None = None) -> "Sample":
        if not isinstance(obj, dict):
            raise CorpusFormatError("record must be a JSON object", line)
        for key in ("id", "question"):
            value = obj.get(key)
            if not isinstance(value, str) or not value:
                raise CorpusFormatError(f"'{key}' must be a nonempty string", line, key)
        answer = obj.get("answer", "")
        if not isinstance(answer, str):
            raise CorpusFormatError("'answer' must be a string", line, "answer")
        media_raw = obj.get("media", [])
        if not isinstance(media_raw, list):
            raise CorpusFormatError("'media' must be a list", line, "media")
        capability = None
        if obj.get("capability") is not None:
            capability = CapabilityLabel.from_json(obj["capability"], line)
        try:
            return cls(
                id=obj["id"],
                question=obj["question"],
                answer=answer,
                media=tuple(MediaRef.from_json(m, line) for m in media_raw),
                capability=capability,
                scenario=obj.get("scenario"),
                source=obj.get("source"),
            )
        except CorpusFormatError as exc:
            if exc.line is None:
                raise CorpusFormatError(str(exc), line, exc.field) from exc
            raise


@dataclass
class CorpusSnapshot:
    """Named, ordered collection of samples tied to a parent snapshot."""

    name: str
    samples: list[Sample] = field(default_factory=list)
    parent: str | None = None

    def __post_init__(self):
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise DuplicateSampleIdError(s.id)
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def ids(self) -> set[str]:
        return {s.id for s in self.samples}

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def sorted_by_id(self) -> "CorpusSnapshot":
        ordered = sorted(self.samples, key=lambda s: s.id)
        return CorpusSnapshot(name=self.name, samples=ordered, parent=self.parent)


@dataclass(frozen=True)
class AuditEntry:
    sample_id: str
    stage: str
    decision: str
    scores: dict = field(default_factory=dict)
    reason: str = ""
    timestamp: float | None = None

    def __post_init__(self):
        if self.decision not in AUDIT_DECISIONS:
            raise CorpusError(f"unknown audit decision '{self.decision}'")

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "stage": self.stage,
            "decision": self.decision,
            "scores": self.scores,
            "reason": self.reason,
            "timestamp": self.timestamp if self.timestamp is not None else time.time(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AuditEntry":
        return cls(
            sample_id=obj["sample_id"],
            stage=obj["stage"],
            decision=obj["decision"],
            scores=obj.get("scores", {}),
            reason=obj.get("reason", ""),
            timestamp=obj.get("timestamp"),
        )


@dataclass(frozen=True)
class StageManifest:
    stage: str
    input_count: int
    output_count: int
    compression_ratio_vs_raw: float | None = None
    config_digest: str = ""
    audit_path: str = ""
    quarantined_count: int = 0

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "input_count": self.input_count,
            "output_count": self.output_count,
            "compression_ratio_vs_raw": self.compression_ratio_vs_raw,
            "config_digest": self.config_digest,
            "audit_path": self.audit_path,
            "quarantined_count": self.quarantined_count,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StageManifest":
        return cls(
            stage=obj["stage"],
            input_count=obj["input_count"],
            output_count=obj["output_count"],
            compression_ratio_vs_raw=obj.get("compression_ratio_vs_raw"),
            config_digest=obj.get("config_digest", ""),
            audit_path=obj.get("audit_path", ""),
            quarantined_count=obj.get("quarantined_count", 0),
        )


def one_decimal(value: float) -> float:
    """Round half-up to one decimal (the rendering used in all reports)."""
    return float(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def compression_ratio(raw_count: int, output_count: int) -> float:
    if output_count <= 0:
        raise CorpusError("compression ratio undefined for empty output")
    return one_decimal(raw_count / output_count)


def load_snapshot(path: str | Path, name: str | None = None, parent: str | None = None) -> CorpusSnapshot:
    """Load a line-delimited snapshot, preserving record order.

    Raises CorpusFormatError with the line number for malformed records and
    DuplicateSampleIdError naming the id and the line of the second copy.
    """
    path = Path(path)
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fin:
        for lineno, raw in enumerate(fin, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            sample = Sample.from_json(obj, lineno)
            if sample.id in seen:
                raise DuplicateSampleIdError(sample.id, lineno)
            seen[sample.id] = lineno
            samples.append(sample)
    return CorpusSnapshot(name=name or path.stem, samples=samples, parent=parent)


def write_snapshot(
    snapshot: CorpusSnapshot,
    path: str | Path,
    *,
    raw_count: int | None = None,
    input_count: int | None = None,
    config_digest: str = "",
    audit_path: str = "",
    quarantined_count: int = 0,
) -> StageManifest:
    """Write a snapshot (order preserved) and return its stage manifest.

    ``raw_count`` is the size of the original raw pool; when given and the
    output is nonempty the manifest carries the one-decimal compression
    ratio raw/output.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fout:
        for sample in snapshot.samples:
            fout.write(json.dumps(sample.to_json(), ensure_ascii=False) + "\n")
    tmp.replace(path)
    ratio = None
    if raw_count is not None and len(snapshot) > 0:
        ratio = compression_ratio(raw_count, len(snapshot))
    return StageManifest(
        stage=snapshot.name,
        input_count=input_count if input_count is not None else len(snapshot),
        output_count=len(snapshot),
        compression_ratio_vs_raw=ratio,
        config_digest=config_digest,
        audit_path=audit_path,
        quarantined_count=quarantined_count,
    )


def snapshot_digest(path: str | Path) -> str:
    """SHA-256 of the snapshot file bytes; the run-to-run determinism probe."""
    h = hashlib.sha256()
    with Path(path).open("rb") as fin:
        for chunk in iter(lambda: fin.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class AuditLog:
    """Append-only audit log, one JSON entry per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a", encoding="utf-8")

    def append(self, entry: AuditEntry) -> None:
        self._fh.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")

    def extend(self, entries: Iterable[AuditEntry]) -> None:
        for entry in entries:
            self.append(entry)

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()

    def __enter__(self) -> "AuditLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_audit(entry: AuditEntry, log: str | Path) -> None:
    with AuditLog(log) as fh:
        fh.append(entry)


def read_audit(path: str | Path) -> list[AuditEntry]:
    entries = []
    with Path(path).open("r", encoding="utf-8") as fin:
        for raw in fin:
            raw = raw.strip()
            if raw:
                entries.append(AuditEntry.from_json(json.loads(raw)))
    return entries


def replay_kept_ids(entries: Iterable[AuditEntry], stage: str) -> set[str]:
    """Reconstruct the kept-set of a stage from its audit trail."""
    kept: set[str] = set()
    for e in entries:
        if e.stage != stage:
            continue
        if e.decision in ("kept", "replicated", "backfilled"):
            kept.add(e.sample_id)
    return kept
