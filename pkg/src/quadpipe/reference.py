"""Stage 2: drop samples the reference model already answers as well.

For each sample the configured reference model produces its own answer
(with media), both answers are scored by the reward model, and the gap
delta = r_a - r_atilde says how much the target answer still teaches.
Samples with delta below tau_atilde are mastered instances and are
dropped; ties at the threshold are kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import AuditEntry, CorpusError, CorpusSnapshot, Sample
from .gateway import ScorerGateway, SampleView
from .stage import StageResult, map_samples, quarantine_entries

STAGE_NAME = "reference"


@dataclass(frozen=True)
class ReferenceConfig:
    tau_atilde: float

    def __post_init__(self):
        if not math.isfinite(self.tau_atilde) or self.tau_atilde < 0:
            raise ValueError("tau_atilde must be finite and >= 0")


@dataclass(frozen=True)
class GapRecord:
    sample_id: str
    r_a: float
    r_atilde: float

    @property
    def delta(self) -> float:
        return self.r_a - self.r_atilde


def reward_gap(r_a: float, r_atilde: float) -> float:
    if not (math.isfinite(r_a) and math.isfinite(r_atilde)):
        raise ValueError("reward gap requires finite scores")
    return r_a - r_atilde


def score_sample(sample: Sample, gateway: ScorerGateway) -> GapRecord:
    view = SampleView.of(sample)
    r_a = gateway.score(view, "answer").score
    reference_answer = gateway.generate(view, "reference")[0]
    r_atilde = gateway.score(SampleView.of(sample, answer=reference_answer.text), "reference").score
    return GapRecord(sample_id=sample.id, r_a=r_a, r_atilde=r_atilde)


def run_stage(
    snapshot: CorpusSnapshot,
    config: ReferenceConfig,
    gateway: ScorerGateway,
    *,
    threads: int = 1,
) -> StageResult:
    for sample in snapshot:
        if not sample.curation_eligible:
            raise CorpusError(f"sample '{sample.id}' has no answer; reference stage needs (q, a) pairs")

    records, faults = map_samples(snapshot.samples, lambda s: score_sample(s, gateway), threads)
    audit, quarantined = quarantine_entries(STAGE_NAME, faults)

    by_id = snapshot.by_id()
    kept: list[Sample] = []
    for sample_id in sorted(records):
        record: GapRecord = records[sample_id]  # type: ignore[assignment]
        keep = record.delta >= config.tau_atilde
        audit.append(AuditEntry(
            sample_id=sample_id,
            stage=STAGE_NAME,
            decision="kept" if keep else "dropped",
            scores={"r_a": record.r_a, "r_atilde": record.r_atilde, "delta": record.delta,
                    "tau_atilde": config.tau_atilde},
            reason="" if keep else "mastered",
        ))
        if keep:
            kept.append(by_id[sample_id])

    out = CorpusSnapshot(name=STAGE_NAME, samples=kept, parent=snapshot.name)
    return StageResult(out, audit, quarantined)
