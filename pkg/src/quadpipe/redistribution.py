"""Stage 4: classify capabilities and resample to a target distribution.

Each sample's question is classified into a capability leaf; integer
per-leaf quotas are apportioned from the target prior by the largest-
remainder method; then leaves are downsampled (seeded, uniform, without
replacement) or, in backfill mode, topped up first from a donor pool
(samples dedup dropped for that leaf) and then by replicating existing
members under provenance-suffixed ids.

All share arithmetic runs on exact rationals so quotas always sum to the
target and never exceed supply in downsample mode.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .corpus import (AuditEntry, CapabilityLabel, CorpusSnapshot, Sample,
                     one_decimal)
from .gateway import ScorerGateway
from .stage import StageResult, map_samples, quarantine_entries

STAGE_NAME = "redist"
MODES = ("downsample_only", "backfill_then_replicate")


@dataclass(frozen=True)
class TargetPrior:
    """Normalized leaf weights; raw nonnegative weights are accepted."""

    weights: dict[str, Fraction]

    def __post_init__(self):
        if not self.weights:
            raise ValueError("target prior needs at least one leaf")
        total = sum(Fraction(w) for w in self.weights.values())
        if any(Fraction(w) < 0 for w in self.weights.values()) or total <= 0:
            raise ValueError("prior weights must be nonnegative with a positive sum")
        normalized = {leaf: Fraction(w) / total for leaf, w in self.weights.items()}
        object.__setattr__(self, "weights", normalized)

    def positive_leaves(self) -> list[str]:
        return sorted(leaf for leaf, w in self.weights.items() if w > 0)


@dataclass(frozen=True)
class RedistributionPlan:
    total_target: int
    quota: dict[str, int]
    mode: str
    seed: int


@dataclass
class LeafRow:
    leaf: str
    before: int
    quota: int
    after: int


@dataclass
class DistributionReport:
    total_before: int
    total_after: int
    rows: list[LeafRow] = field(default_factory=list)

    def render(self) -> str:
        lines = [f"{'leaf':<24}{'before':>10}{'%':>8}{'quota':>10}{'after':>10}{'%':>8}"]
        for r in self.rows:
            pct_b = one_decimal(100 * r.before / self.total_before) if self.total_before else 0.0
            pct_a = one_decimal(100 * r.after / self.total_after) if self.total_after else 0.0
            lines.append(f"{r.leaf:<24}{r.before:>10}{pct_b:>8}{r.quota:>10}{r.after:>10}{pct_a:>8}")
        lines.append(f"{'total':<24}{self.total_before:>10}{'':>8}"
                     f"{sum(r.quota for r in self.rows):>10}{self.total_after:>10}")
        return "\n".join(lines)


def classify_all(
    snapshot: CorpusSnapshot,
    gateway: ScorerGateway,
    threads: int = 1,
) -> tuple[dict[str, CapabilityLabel], dict[str, str]]:
    labels, faults = map_samples(
        snapshot.samples,
        lambda s: gateway.classify(s.question, sample_id=s.id),
        threads,
    )
    reasons = {sid: f"quarantine:{exc.code}" for sid, exc in faults.items()}
    return labels, reasons  # type: ignore[return-value]


def largest_remainder(total: int, weights: dict[str, Fraction]) -> dict[str, int]:
    """Hamilton apportionment of `total` across leaves; remainder ties
    break by leaf name so the result is deterministic."""
    shares = {leaf: Fraction(total) * w for leaf, w in weights.items()}
    quota = {leaf: math.floor(s) for leaf, s in shares.items()}
    leftover = total - sum(quota.values())
    by_remainder = sorted(weights, key=lambda leaf: (-(shares[leaf] - quota[leaf]), leaf))
    for leaf in by_remainder[:leftover]:
        quota[leaf] += 1
    return quota


def make_plan(
    counts: dict[str, int],
    prior: TargetPrior,
    mode: str,
    total_target: int | None = None,
    seed: int = 0,
) -> RedistributionPlan:
    if not counts:
        raise ValueError("make_plan needs nonempty counts")
    if mode not in MODES:
        raise ValueError(f"unknown redistribution mode '{mode}'")

    if mode == "downsample_only":
        starved = [leaf for leaf in prior.positive_leaves() if counts.get(leaf, 0) == 0]
        if starved:
            raise ValueError(f"downsample_only cannot satisfy leaves with no supply: {starved}")
        total = min(
            Fraction(counts[leaf]) / prior.weights[leaf] for leaf in prior.positive_leaves())
        t = math.floor(total)
    else:
        if total_target is None:
            raise ValueError("backfill_then_replicate requires total_target")
        t = int(total_target)
    if t < 1:
        raise ValueError(f"target total {t} is not positive; prior and supply are incompatible")

    quota = largest_remainder(t, prior.weights)
    if mode == "downsample_only":
        for leaf, q in quota.items():
            if q > counts.get(leaf, 0):
                raise AssertionError(f"quota {q} exceeds supply for leaf '{leaf}'")
    return RedistributionPlan(total_target=t, quota=quota, mode=mode, seed=seed)


def _leaf_rng(seed: int, leaf: str) -> random.Random:
    return random.Random(f"{seed}:{leaf}")


def apply_plan(
    snapshot: CorpusSnapshot,
    labels: dict[str, CapabilityLabel],
    plan: RedistributionPlan,
    *,
    backfill_pool: CorpusSnapshot | None = None,
    backfill_labels: dict[str, CapabilityLabel] | None = None,
) -> tuple[StageResult, DistributionReport]:
    """Execute the plan. Samples without a label (quarantined classify
    calls) must already be excluded from `snapshot`."""
    by_leaf: dict[str, list[str]] = {}
    for sample in snapshot:
        if sample.id not in labels:
            raise ValueError(f"sample '{sample.id}' has no capability label")
        by_leaf.setdefault(labels[sample.id].leaf, []).append(sample.id)
    for ids in by_leaf.values():
        ids.sort()

    pool_by_leaf: dict[str, list[str]] = {}
    if backfill_pool is not None:
        pool_labels = backfill_labels or {}
        for sample in backfill_pool:
            label = pool_labels.get(sample.id)
            if label is not None:
                pool_by_leaf.setdefault(label.leaf, []).append(sample.id)
        for ids in pool_by_leaf.values():
            ids.sort()

    by_id = snapshot.by_id()
    pool_by_id = backfill_pool.by_id() if backfill_pool is not None else {}

    out_samples: list[Sample] = []
    audit: list[AuditEntry] = []
    rows: list[LeafRow] = []
    all_leaves = sorted(set(by_leaf) | set(plan.quota))
    for leaf in all_leaves:
        have = by_leaf.get(leaf, [])
        want = plan.quota.get(leaf, 0)
        rng = _leaf_rng(plan.seed, leaf)
        taken: list[Sample] = []

        if len(have) > want:
            chosen = set(rng.sample(have, want))
            for sid in have:
                if sid in chosen:
                    taken.append(by_id[sid].with_capability(labels[sid]))
                    audit.append(AuditEntry(sid, STAGE_NAME, "kept", scores={"leaf": leaf}))
                else:
                    audit.append(AuditEntry(sid, STAGE_NAME, "dropped",
                                            scores={"leaf": leaf}, reason="over-quota"))
        else:
            for sid in have:
                taken.append(by_id[sid].with_capability(labels[sid]))
                audit.append(AuditEntry(sid, STAGE_NAME, "kept", scores={"leaf": leaf}))
            shortfall = want - len(have)
            if shortfall > 0 and plan.mode == "backfill_then_replicate":
                donors = pool_by_leaf.get(leaf, [])
                grabbed = sorted(rng.sample(donors, min(shortfall, len(donors))))
                for sid in grabbed:
                    label = (backfill_labels or {})[sid]
                    taken.append(pool_by_id[sid].with_capability(label))
                    audit.append(AuditEntry(sid, STAGE_NAME, "backfilled", scores={"leaf": leaf}))
                shortfall -= len(grabbed)
            if shortfall > 0:
                if plan.mode == "downsample_only":
                    raise AssertionError(f"downsample plan under-supplied for leaf '{leaf}'")
                if not taken:
                    raise ValueError(f"leaf '{leaf}' has quota {want} but no members to replicate")
                origins = sorted(taken, key=lambda s: s.id)
                for i in range(shortfall):
                    origin = origins[i % len(origins)]
                    copy_index = i // len(origins) + 1
                    clone_id = f"{origin.id}#r{copy_index}"
                    clone = Sample(
                        id=clone_id, question=origin.question, answer=origin.answer,
                        media=origin.media, capability=origin.capability,
                        scenario=origin.scenario, source=origin.source)
                    taken.append(clone)
                    audit.append(AuditEntry(clone_id, STAGE_NAME, "replicated",
                                            scores={"leaf": leaf, "origin": origin.id}))

        rows.append(LeafRow(leaf=leaf, before=len(have), quota=want, after=len(taken)))
        out_samples.extend(taken)

    out_samples.sort(key=lambda s: s.id)
    out = CorpusSnapshot(name=STAGE_NAME, samples=out_samples, parent=snapshot.name)
    report = DistributionReport(
        total_before=len(snapshot), total_after=len(out_samples), rows=rows)
    return StageResult(out, audit, {}, details={"plan": plan}), report


@dataclass(frozen=True)
class RedistConfig:
    prior: TargetPrior
    mode: str = "downsample_only"
    total_target: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown redistribution mode '{self.mode}'")
        if self.mode == "backfill_then_replicate" and self.total_target is None:
            raise ValueError("backfill_then_replicate requires total_target")


def run_stage(
    snapshot: CorpusSnapshot,
    config: RedistConfig,
    gateway: ScorerGateway,
    *,
    backfill_pool: CorpusSnapshot | None = None,
    threads: int = 1,
) -> tuple[StageResult, DistributionReport]:
    labels, quarantine_reasons = classify_all(snapshot, gateway, threads)
    q_audit = [AuditEntry(sid, STAGE_NAME, "dropped", reason=quarantine_reasons[sid])
               for sid in sorted(quarantine_reasons)]

    labeled = CorpusSnapshot(
        name=snapshot.name,
        samples=[s for s in snapshot if s.id in labels],
        parent=snapshot.parent)
    counts: dict[str, int] = {}
    for sid, label in labels.items():
        counts[label.leaf] = counts.get(label.leaf, 0) + 1

    backfill_labels: dict[str, CapabilityLabel] = {}
    pool = None
    if config.mode == "backfill_then_replicate" and backfill_pool is not None and len(backfill_pool):
        backfill_labels, pool_quarantine = classify_all(backfill_pool, gateway, threads)
        pool = CorpusSnapshot(
            name=backfill_pool.name,
            samples=[s for s in backfill_pool if s.id in backfill_labels],
            parent=backfill_pool.parent)

    plan = make_plan(counts, config.prior, config.mode,
                     total_target=config.total_target, seed=config.seed)
    result, report = apply_plan(labeled, labels, plan,
                                backfill_pool=pool, backfill_labels=backfill_labels)
    result.audit = q_audit + result.audit
    result.quarantined = dict(quarantine_reasons)
    return result, report
