"""Difficulty tiering by reference-model voting, plus the phased schedule.

Every sample's target answer is scored once; each of the K reference
workers generates its own answer, which is scored by the same reward
model. A worker "votes" when its answer strictly beats the target
(gap > tau_cl). The vote count s maps through a non-increasing function
f to a tier in 1..n: many models beating the label means easy (tier 1),
none means hard (tier n). A worker fault makes that worker's gap -inf,
so it cannot vote but the sample still gets tiered.

The default training schedule runs single-image tiers 1..n-1, then a
dedicated all-video stage, then a final mixed stage holding the hardest
single-image tier plus every multi-image and pure-text sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .corpus import AuditEntry, CorpusSnapshot, Sample
from .gateway import GatewayFault, ScorerGateway, SampleView
from .stage import StageResult, map_samples, quarantine_entries

STAGE_NAME = "curriculum"
MODALITIES = ("single-image", "multi-image", "video", "pure-text")


@dataclass(frozen=True)
class VoteConfig:
    K: int
    tau_cl: float
    n: int
    table: dict[int, int] | None = None  # explicit f: vote count -> tier

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 1 <= self.n <= self.K + 1:
            raise ValueError("tier count n must satisfy 1 <= n <= K+1")
        if not math.isfinite(self.tau_cl):
            raise ValueError("tau_cl must be finite")
        if self.table is not None:
            if sorted(self.table) != list(range(self.K + 1)):
                raise ValueError("explicit tier table must cover s = 0..K exactly")
            if any(not 1 <= t <= self.n for t in self.table.values()):
                raise ValueError(f"tier table values must lie in 1..{self.n}")
            for s in range(self.K):
                if self.table[s + 1] > self.table[s]:
                    raise ValueError("tier table must be non-increasing in the vote count")


@dataclass(frozen=True)
class TierAssignment:
    sample_id: str
    per_model_gaps: tuple[float, ...]
    s: int
    tier: int


def vote_count(gaps: Sequence[float], tau_cl: float) -> int:
    """Strict exceedances; -inf gaps (worker faults) never vote."""
    return sum(1 for g in gaps if g > tau_cl)


def assign_tier(s: int, config: VoteConfig) -> int:
    if not 0 <= s <= config.K:
        raise ValueError(f"vote count {s} outside 0..{config.K}")
    if config.table is not None:
        return config.table[s]
    return 1 + (config.K - s) * config.n // (config.K + 1)


def _gaps_for_sample(sample: Sample, config: VoteConfig, gateway: ScorerGateway) -> tuple[float, ...]:
    view = SampleView.of(sample)
    r_a = gateway.score(view, "answer").score
    gaps: list[float] = []
    for worker in gateway.ocl_refs:
        try:
            answer = gateway.generate(view, "reference", worker=worker)[0]
            r_k = gateway.score(SampleView.of(sample, answer=answer.text), "reference").score
            gaps.append(r_k - r_a)
        except GatewayFault:
            gaps.append(-math.inf)
    return tuple(gaps)


def run(
    snapshot: CorpusSnapshot,
    config: VoteConfig,
    gateway: ScorerGateway,
    *,
    threads: int = 1,
) -> tuple[list[TierAssignment], dict[int, CorpusSnapshot], StageResult]:
    if len(gateway.ocl_refs) != config.K:
        raise ValueError(
            f"config asks for K={config.K} reference workers, gateway has {len(gateway.ocl_refs)}")

    gap_map, faults = map_samples(
        snapshot.samples, lambda s: _gaps_for_sample(s, config, gateway), threads)
    audit, quarantined = quarantine_entries(STAGE_NAME, faults)

    assignments: list[TierAssignment] = []
    for sample_id in sorted(gap_map):
        gaps: tuple[float, ...] = gap_map[sample_id]  # type: ignore[assignment]
        s = vote_count(gaps, config.tau_cl)
        tier = assign_tier(s, config)
        assignments.append(TierAssignment(
            sample_id=sample_id, per_model_gaps=gaps, s=s, tier=tier))
        audit.append(AuditEntry(
            sample_id=sample_id, stage=STAGE_NAME, decision="kept",
            scores={"gaps": [None if math.isinf(g) else g for g in gaps],
                    "s": s, "tier": tier},
            reason="faulted-workers" if any(math.isinf(g) for g in gaps) else ""))

    by_id = snapshot.by_id()
    tiers: dict[int, CorpusSnapshot] = {}
    for t in range(1, config.n + 1):
        members = [by_id[a.sample_id] for a in assignments if a.tier == t]
        tiers[t] = CorpusSnapshot(name=f"tier{t}", samples=members, parent=snapshot.name)

    survivors = [by_id[a.sample_id] for a in assignments]
    result = StageResult(
        CorpusSnapshot(name=STAGE_NAME, samples=survivors, parent=snapshot.name),
        audit, quarantined)
    return assignments, tiers, result


@dataclass(frozen=True)
class ScheduleStage:
    name: str
    snapshot: CorpusSnapshot

    def modality_counts(self) -> dict[str, int]:
        counts = {m: 0 for m in MODALITIES}
        for sample in self.snapshot:
            counts[sample.modality] += 1
        return counts


def emit_schedule(
    tiers: dict[int, CorpusSnapshot],
    modality_tags: dict[str, str] | None = None,
) -> list[ScheduleStage]:
    """Phased schedule: [Tier1..Tier(n-1)](single-image), Video, Tier n.

    Video samples all train in the dedicated Video stage; multi-image and
    pure-text samples are deferred to the final stage regardless of their
    difficulty tier.
    """
    if not tiers:
        raise ValueError("emit_schedule needs at least one tier")
    n = max(tiers)
    if sorted(tiers) != list(range(1, n + 1)):
        raise ValueError("tiers must be numbered 1..n")

    def modality(sample: Sample) -> str:
        tag = modality_tags.get(sample.id, sample.modality) if modality_tags else sample.modality
        if tag not in MODALITIES:
            raise ValueError(f"unknown modality tag '{tag}' for sample '{sample.id}'")
        return tag

    stages: list[ScheduleStage] = []
    video: list[Sample] = []
    deferred: list[Sample] = []
    for t in range(1, n + 1):
        members = []
        for sample in tiers[t]:
            m = modality(sample)
            if m == "video":
                video.append(sample)
            elif t < n and m in ("multi-image", "pure-text"):
                deferred.append(sample)
            else:
                members.append(sample)
        if t == n:
            members.extend(deferred)
            members.sort(key=lambda s: s.id)
            stages.append(ScheduleStage(
                name="Video",
                snapshot=CorpusSnapshot(name="video", samples=sorted(video, key=lambda s: s.id))))
            stages.append(ScheduleStage(
                name=f"Tier{t}", snapshot=CorpusSnapshot(name=f"tier{t}", samples=members)))
        else:
            members.sort(key=lambda s: s.id)
            stages.append(ScheduleStage(
                name=f"Tier{t}", snapshot=CorpusSnapshot(name=f"tier{t}", samples=members)))
    return stages


def schedule_manifest(stages: list[ScheduleStage]) -> list[dict]:
    return [
        {"stage": st.name, "count": len(st.snapshot), "modalities": st.modality_counts()}
        for st in stages
    ]
