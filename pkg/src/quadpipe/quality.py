"""Stage 1: keep samples that are high-reward and visually grounded.

Two checks gate every sample. The target answer must score at least tau
under the reward model, and it must beat a vision-ablated answer by at
least the margin tau_abar. The ablated answer is generated from the
question alone (no media) but scored with media present, so the margin
measures how much of the answer's reward actually depends on the media
rather than on language priors.

tau can be given directly or as a percentile of the observed reward
distribution; percentile mode scores the whole pool first, then decides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .corpus import AuditEntry, CorpusError, CorpusSnapshot, Sample
from .gateway import ScorerGateway, SampleView
from .stage import StageResult, map_samples, quarantine_entries

STAGE_NAME = "quality"


@dataclass(frozen=True)
class QualityConfig:
    threshold_mode: str  # "absolute" | "percentile"
    tau_abar: float
    tau: float | None = None
    p: float | None = None

    def __post_init__(self):
        if self.threshold_mode == "absolute":
            if self.tau is None:
                raise ValueError("absolute threshold mode requires tau")
        elif self.threshold_mode == "percentile":
            if self.p is None or not 0 < self.p < 100:
                raise ValueError("percentile mode requires p strictly between 0 and 100")
        else:
            raise ValueError(f"unknown threshold_mode '{self.threshold_mode}'")
        if not math.isfinite(self.tau_abar):
            raise ValueError("tau_abar must be finite")


@dataclass(frozen=True)
class Decision:
    keep: bool
    reason: str = ""  # "", "low-reward", "low-margin"


@dataclass(frozen=True)
class QualityRecord:
    sample_id: str
    r_a: float
    r_abar: float

    @property
    def margin(self) -> float:
        return self.r_a - self.r_abar


def percentile_threshold(scores: Iterable[float], p: float) -> float:
    """Nearest-rank threshold: keeping {r >= tau} keeps the top p percent.

    With N scores the tau returned is the ceil(p*N/100)-th largest, so at
    least that many survive; ties at tau all survive (tie expansion). The
    rank is computed in exact rational arithmetic so e.g. p=30, N=10
    never lands on rank 4 through float noise.
    """
    ordered = sorted(scores, reverse=True)
    if not ordered:
        raise ValueError("percentile threshold needs at least one score")
    if not 0 < p <= 100:
        raise ValueError("percentile p must be in (0, 100]")
    rank = math.ceil(Fraction(p) * len(ordered) / 100)
    return ordered[rank - 1]


def evaluate(r_a: float, r_abar: float, tau: float, tau_abar: float) -> Decision:
    if not (math.isfinite(r_a) and math.isfinite(r_abar)):
        raise ValueError("quality evaluation requires finite scores")
    if r_a < tau:
        return Decision(False, "low-reward")
    if r_a - r_abar < tau_abar:
        return Decision(False, "low-margin")
    return Decision(True)


def score_sample(sample: Sample, gateway: ScorerGateway) -> QualityRecord:
    """Score the target answer and the vision-ablated regeneration.

    The ablated answer is produced without media but scored with the
    sample's media attached, same as the target answer.
    """
    view = SampleView.of(sample)
    r_a = gateway.score(view, "answer").score
    ablated = gateway.generate(view, "vision_ablated")[0]
    r_abar = gateway.score(SampleView.of(sample, answer=ablated.text), "vision_ablated").score
    return QualityRecord(sample_id=sample.id, r_a=r_a, r_abar=r_abar)


def run_stage(
    snapshot: CorpusSnapshot,
    config: QualityConfig,
    gateway: ScorerGateway,
    *,
    threads: int = 1,
) -> StageResult:
    for sample in snapshot:
        if not sample.curation_eligible:
            raise CorpusError(f"sample '{sample.id}' has no answer; quality stage needs (q, a) pairs")

    records, faults = map_samples(snapshot.samples, lambda s: score_sample(s, gateway), threads)
    audit, quarantined = quarantine_entries(STAGE_NAME, faults)

    if config.threshold_mode == "absolute":
        tau = float(config.tau)  # type: ignore[arg-type]
    else:
        tau = percentile_threshold((records[sid].r_a for sid in records), float(config.p))  # type: ignore[arg-type]

    by_id = snapshot.by_id()
    kept: list[Sample] = []
    for sample_id in sorted(records):
        record: QualityRecord = records[sample_id]  # type: ignore[assignment]
        decision = evaluate(record.r_a, record.r_abar, tau, config.tau_abar)
        audit.append(AuditEntry(
            sample_id=sample_id,
            stage=STAGE_NAME,
            decision="kept" if decision.keep else "dropped",
            scores={"r_a": record.r_a, "r_abar": record.r_abar, "margin": record.margin,
                    "tau": tau, "tau_abar": config.tau_abar},
            reason=decision.reason,
        ))
        if decision.keep:
            kept.append(by_id[sample_id])

    out = CorpusSnapshot(name=STAGE_NAME, samples=kept, parent=snapshot.name)
    return StageResult(out, audit, quarantined, details={"tau": tau})
