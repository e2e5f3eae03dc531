"""Pipeline runner: stage chaining, checkpoints, caches, resume.

A run directory is self-describing: it holds the resolved config (with
digest), a checkpoint naming the completed stages, one snapshot and one
audit file per stage, the stage manifests, the optional score cache, and
a summary. Resuming verifies the config digest and the input file digest
and then skips completed stages, so an interrupted run finishes with
byte-identical outputs to an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import dedup, quality, redistribution, reference
from .config import PipelineConfig, config_from_dict
from .corpus import (CorpusSnapshot, StageManifest, load_snapshot,
                     read_audit, snapshot_digest, write_snapshot)
from .gateway import ResultCache, ScorerGateway, with_cache

log = logging.getLogger(__name__)


class RunStateError(RuntimeError):
    """Checkpoint/config disagreement; resuming would corrupt the run."""


@dataclass
class RunSummary:
    run_dir: str
    config_digest: str
    raw_count: int
    completed: list[str]
    manifests: list[StageManifest]
    final_snapshot: str | None
    final_digest: str | None
    quarantined_total: int
    worker_calls: int
    compression: list[tuple[str, int, float]] = field(default_factory=list)
    distribution: str | None = None

    def to_json(self) -> dict:
        return {
            "run_dir": self.run_dir,
            "config_digest": self.config_digest,
            "raw_count": self.raw_count,
            "completed": self.completed,
            "manifests": [m.to_json() for m in self.manifests],
            "final_snapshot": self.final_snapshot,
            "final_digest": self.final_digest,
            "quarantined_total": self.quarantined_total,
            "worker_calls": self.worker_calls,
            "compression": [list(row) for row in self.compression],
            "distribution": self.distribution,
        }


def _write_json(path: Path, obj: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fout:
        json.dump(obj, fout, ensure_ascii=False, indent=2)
        fout.write("\n")
    tmp.replace(path)


def _read_json(path: Path) -> dict:
    with path.open("r", encoding="utf-8") as fin:
        return json.load(fin)


class PipelineRunner:
    def __init__(self, config: PipelineConfig, run_dir: str | Path):
        self.config = config
        self.run_dir = Path(run_dir)
        self.snapshots_dir = self.run_dir / "snapshots"
        self.audit_dir = self.run_dir / "audit"

    # -- paths ---------------------------------------------------------------

    def _snapshot_path(self, stage: str) -> Path:
        return self.snapshots_dir / f"{stage}.jsonl"

    def _audit_path(self, stage: str) -> Path:
        return self.audit_dir / f"{stage}.jsonl"

    @property
    def _checkpoint_path(self) -> Path:
        return self.run_dir / "checkpoint.json"

    @property
    def _manifests_path(self) -> Path:
        return self.run_dir / "manifests.json"

    def _cache_path(self) -> Path | None:
        cache = self.config.cache
        if cache is False or cache is None:
            return None
        if cache is True:
            return self.run_dir / "cache" / "scores.jsonl"
        return Path(cache)

    # -- checkpointing ---------------------------------------------------------

    def _load_checkpoint(self, input_path: Path, digest: str) -> dict:
        if self._checkpoint_path.exists():
            ckpt = _read_json(self._checkpoint_path)
            if ckpt["config_digest"] != digest:
                raise RunStateError(
                    "config digest mismatch: run dir was created with "
                    f"{ckpt['config_digest'][:12]}, current config digests to {digest[:12]}; "
                    "refusing to mix results")
            if ckpt["input_digest"] != snapshot_digest(input_path):
                raise RunStateError("input file changed since the checkpoint was written")
            return ckpt
        return {
            "config_digest": digest,
            "input_path": str(input_path),
            "input_digest": snapshot_digest(input_path),
            "raw_count": None,
            "completed": [],
        }

    # -- stage execution -------------------------------------------------------

    def _dedup_dropped_pool(self, dedup_input: CorpusSnapshot) -> CorpusSnapshot | None:
        audit_path = self._audit_path("dedup")
        if not audit_path.exists():
            return None
        dropped = {e.sample_id for e in read_audit(audit_path)
                   if e.decision == "dropped" and e.reason == "near-duplicate"}
        pool = [s for s in dedup_input if s.id in dropped]
        return CorpusSnapshot(name="dedup-dropped", samples=pool, parent=dedup_input.name)

    def _run_stage(self, stage: str, current: CorpusSnapshot, gateway: ScorerGateway,
                   dedup_input: CorpusSnapshot | None):
        threads = self.config.threads
        if stage == "quality":
            return quality.run_stage(current, self.config.quality, gateway, threads=threads), None
        if stage == "reference":
            return reference.run_stage(current, self.config.reference, gateway, threads=threads), None
        if stage == "dedup":
            return dedup.run_stage(current, self.config.dedup, gateway, threads=threads), None
        if stage == "redist":
            pool = None
            if self.config.redist.mode == "backfill_then_replicate" and dedup_input is not None:
                pool = self._dedup_dropped_pool(dedup_input)
            result, report = redistribution.run_stage(
                current, self.config.redist, gateway, backfill_pool=pool, threads=threads)
            return result, report
        raise RunStateError(f"unknown stage '{stage}'")

    # -- public API --------------------------------------------------------------

    def run(self, input_path: str | Path, stop_after: str | None = None) -> RunSummary:
        input_path = Path(input_path)
        digest = self.config.digest()
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.snapshots_dir.mkdir(exist_ok=True)
        self.audit_dir.mkdir(exist_ok=True)
        _write_json(self.run_dir / "config.json",
                    {"digest": digest, "config": self.config.to_dict()})

        ckpt = self._load_checkpoint(input_path, digest)
        raw = load_snapshot(input_path, name="raw")
        ckpt["raw_count"] = len(raw)
        completed: list[str] = list(ckpt["completed"])

        manifests: list[StageManifest] = []
        if self._manifests_path.exists():
            manifests = [StageManifest.from_json(m)
                         for m in _read_json(self._manifests_path)["manifests"]]

        cache_path = self._cache_path()
        cache = ResultCache(cache_path) if cache_path is not None else None
        gateway = self.config.build_gateway()
        if cache is not None:
            gateway = with_cache(gateway, cache)

        distribution: str | None = None
        if (self.run_dir / "distribution.txt").exists():
            distribution = (self.run_dir / "distribution.txt").read_text(encoding="utf-8")

        try:
            current = raw
            previous: CorpusSnapshot = raw
            dedup_input: CorpusSnapshot | None = None
            for stage in self.config.stages:
                if stage == "dedup":
                    dedup_input = current
                if stage in completed:
                    previous = current
                    current = load_snapshot(self._snapshot_path(stage), name=stage,
                                            parent=previous.name)
                    log.info("stage %s already complete (%d samples), skipping",
                             stage, len(current))
                    continue

                log.info("running stage %s on %d samples", stage, len(current))
                result, report = self._run_stage(stage, current, gateway, dedup_input)
                with (self._audit_path(stage).open("w", encoding="utf-8")) as fout:
                    for entry in result.audit:
                        fout.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")
                manifest = write_snapshot(
                    result.snapshot, self._snapshot_path(stage),
                    raw_count=len(raw), input_count=len(current),
                    config_digest=digest, audit_path=str(self._audit_path(stage)),
                    quarantined_count=len(result.quarantined))
                manifests = [m for m in manifests if m.stage != stage] + [manifest]
                _write_json(self._manifests_path,
                            {"manifests": [m.to_json() for m in manifests]})
                if report is not None:
                    distribution = report.render()
                    (self.run_dir / "distribution.txt").write_text(
                        distribution + "\n", encoding="utf-8")

                completed.append(stage)
                ckpt["completed"] = completed
                _write_json(self._checkpoint_path, ckpt)
                previous = current
                current = result.snapshot
                if stop_after == stage:
                    log.info("stopping after stage %s as requested", stage)
                    break

            final_path = final_digest = None
            if completed:
                last = completed[-1]
                final_path = str(self._snapshot_path(last))
                final_digest = snapshot_digest(final_path)

            ordered = [m for s in completed for m in manifests if m.stage == s]
            summary = RunSummary(
                run_dir=str(self.run_dir),
                config_digest=digest,
                raw_count=len(raw),
                completed=completed,
                manifests=ordered,
                final_snapshot=final_path,
                final_digest=final_digest,
                quarantined_total=sum(m.quarantined_count for m in ordered),
                worker_calls=gateway.worker_calls(),
                compression=[(m.stage, m.output_count, m.compression_ratio_vs_raw)
                             for m in ordered if m.output_count > 0],
                distribution=distribution,
            )
            _write_json(self.run_dir / "summary.json", summary.to_json())
            return summary
        finally:
            if cache is not None:
                cache.close()
            gateway.close()

    @classmethod
    def resume(cls, run_dir: str | Path, config_path: str | Path | None = None) -> RunSummary:
        run_dir = Path(run_dir)
        stored = _read_json(run_dir / "config.json")
        if config_path is not None:
            from .config import load_config
            offered = load_config(config_path)
            if offered.digest() != stored["digest"]:
                raise RunStateError(
                    f"config digest mismatch: run dir has {stored['digest'][:12]}, "
                    f"{config_path} digests to {offered.digest()[:12]}; refusing to resume")
        config = config_from_dict(stored["config"], base_dir=run_dir)
        ckpt = _read_json(run_dir / "checkpoint.json")
        runner = cls(config, run_dir)
        return runner.run(ckpt["input_path"])
