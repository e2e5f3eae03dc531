"""Shared plumbing for pipeline stages.

Every stage maps a scoring function over samples (possibly in parallel),
then reduces decisions in sorted-id order so outputs never depend on
scheduling. Gateway faults never abort a stage: the affected samples are
quarantined (audited as dropped, excluded downstream).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .corpus import AuditEntry, CorpusSnapshot, Sample
from .gateway import GatewayFault


@dataclass
class StageResult:
    snapshot: CorpusSnapshot
    audit: list[AuditEntry]
    quarantined: dict[str, str]  # sample_id -> "quarantine:<code>"
    details: dict = field(default_factory=dict)


def map_samples(
    samples: Sequence[Sample],
    fn: Callable[[Sample], object],
    threads: int = 1,
) -> tuple[dict[str, object], dict[str, GatewayFault]]:
    """Apply fn per sample; return ({id: result}, {id: fault}).

    Results are keyed by id and consumed in sorted order by callers, so
    the thread count never affects stage output.
    """

    def one(sample: Sample):
        try:
            return sample.id, fn(sample), None
        except GatewayFault as exc:
            return sample.id, None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, samples))
    else:
        outcomes = [one(s) for s in samples]

    results: dict[str, object] = {}
    faults: dict[str, GatewayFault] = {}
    for sample_id, value, fault in outcomes:
        if fault is None:
            results[sample_id] = value
        else:
            faults[sample_id] = fault
    return results, faults


def quarantine_entries(
    stage: str, faults: dict[str, GatewayFault]
) -> tuple[list[AuditEntry], dict[str, str]]:
    reasons = {sid: f"quarantine:{exc.code}" for sid, exc in faults.items()}
    entries = [
        AuditEntry(sample_id=sid, stage=stage, decision="dropped", reason=reasons[sid])
        for sid in sorted(faults)
    ]
    return entries, reasons
