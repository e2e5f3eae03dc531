"""Benchmark diagnostics from three-pass correctness logs.

Each instance is evaluated three ways: by the full model with vision, by
the same model with vision ablated, and by its text-only base. From the
resulting correctness sets (S_V, S_-V, S_T) the report derives:

    MG  = (|S_V| - |S_-V|) / N          multimodal gain
    ML  = max(0, (|S_-V| - |S_T|) / N)  multimodal leakage
    VNR = |S_V \\ S_-V| / |S_V|          visual necessity rate
    VIF = |F_V intersect S_-V| / |F_V|  vision-induced failure

with F_V the complement of S_V. VNR is 0 when S_V is empty and VIF is 0
when F_V is empty (the raw formulas are 0/0 there). The exact identity
MG*N = VNR*|S_V| - VIF*|F_V| holds for every record set.

Also houses the InsPerImg mean and the stage compression table, both
rendered with half-up one-decimal rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import CorpusFormatError, one_decimal


@dataclass(frozen=True)
class EvalRecord:
    instance_id: str
    correct_with_vision: bool
    correct_without_vision: bool
    correct_text_base: bool
    group: str | None = None

    @classmethod
    def from_json(cls, obj: dict, line: int | None = None) -> "EvalRecord":
        if not isinstance(obj, dict):
            raise CorpusFormatError("eval record must be a JSON object", line)
        if not obj.get("instance_id"):
            raise CorpusFormatError("'instance_id' must be nonempty", line, "instance_id")
        flags = {}
        for key in ("correct_with_vision", "correct_without_vision", "correct_text_base"):
            value = obj.get(key)
            if not isinstance(value, bool):
                raise CorpusFormatError(f"'{key}' must be a boolean", line, key)
            flags[key] = value
        return cls(instance_id=obj["instance_id"], group=obj.get("group"), **flags)


@dataclass(frozen=True)
class DiagnosticReport:
    n: int
    acc_v: float
    acc_nov: float
    acc_t: float
    mg: float
    ml: float
    vnr: float
    vif: float
    per_group: dict[str, "DiagnosticReport"] | None = None


def correctness_sets(
    records: Iterable[EvalRecord],
) -> tuple[set[str], set[str], set[str], set[str]]:
    """(S_V, S_-V, S_T, F_V) as instance-id sets; duplicate ids error."""
    s_v: set[str] = set()
    s_nov: set[str] = set()
    s_t: set[str] = set()
    all_ids: set[str] = set()
    for r in records:
        if r.instance_id in all_ids:
            raise ValueError(f"duplicate instance id '{r.instance_id}'")
        all_ids.add(r.instance_id)
        if r.correct_with_vision:
            s_v.add(r.instance_id)
        if r.correct_without_vision:
            s_nov.add(r.instance_id)
        if r.correct_text_base:
            s_t.add(r.instance_id)
    return s_v, s_nov, s_t, all_ids - s_v


def compute_report(records: Sequence[EvalRecord], by_group: bool = False) -> DiagnosticReport:
    if not records:
        raise ValueError("diagnostics need at least one record")
    s_v, s_nov, s_t, f_v = correctness_sets(records)
    n = len(records)
    report = DiagnosticReport(
        n=n,
        acc_v=len(s_v) / n,
        acc_nov=len(s_nov) / n,
        acc_t=len(s_t) / n,
        mg=(len(s_v) - len(s_nov)) / n,
        ml=max(0.0, (len(s_nov) - len(s_t)) / n),
        vnr=len(s_v - s_nov) / len(s_v) if s_v else 0.0,
        vif=len(f_v & s_nov) / len(f_v) if f_v else 0.0,
    )
    if not by_group:
        return report
    groups: dict[str, list[EvalRecord]] = {}
    for r in records:
        groups.setdefault(r.group or "(untagged)", []).append(r)
    per_group = {name: compute_report(members) for name, members in sorted(groups.items())}
    return DiagnosticReport(**{**report.__dict__, "per_group": per_group})


def ins_per_img(counts: Sequence[int]) -> float:
    """Mean object-instance count per image, one-decimal rendering."""
    if not counts:
        raise ValueError("ins_per_img needs at least one count")
    if any(c < 0 for c in counts):
        raise ValueError("instance counts must be nonnegative")
    return one_decimal(sum(counts) / len(counts))


def compression_report(
    stage_counts: Sequence[tuple[str, int]], raw: int
) -> list[tuple[str, int, float]]:
    """Per-stage (name, count, raw/count ratio at one decimal)."""
    if raw <= 0:
        raise ValueError("raw count must be positive")
    rows = []
    for stage, count in stage_counts:
        if count <= 0:
            raise ValueError(f"stage '{stage}' has nonpositive count {count}")
        rows.append((stage, count, one_decimal(raw / count)))
    return rows


def render_report(report: DiagnosticReport) -> str:
    def row(name: str, r: DiagnosticReport) -> str:
        return (f"{name:<16}{r.n:>8}{r.acc_v:>8.3f}{r.acc_nov:>8.3f}{r.acc_t:>8.3f}"
                f"{r.vnr:>8.3f}{r.vif:>8.3f}{r.mg:>8.3f}{r.ml:>8.3f}")

    lines = [f"{'group':<16}{'N':>8}{'acc_v':>8}{'acc_nv':>8}{'acc_t':>8}"
             f"{'VNR':>8}{'VIF':>8}{'MG':>8}{'ML':>8}",
             row("all", report)]
    for name, sub in (report.per_group or {}).items():
        lines.append(row(name, sub))
    return "\n".join(lines)


def render_compression(rows: Sequence[tuple[str, int, float]], raw: int) -> str:
    lines = [f"{'stage':<16}{'count':>12}{'C.R.':>8}", f"{'raw':<16}{raw:>12}{1.0:>8}"]
    for stage, count, ratio in rows:
        lines.append(f"{stage:<16}{count:>12}{ratio:>8}")
    return "\n".join(lines)


def load_eval_records(path: str | Path) -> list[EvalRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fin:
        for lineno, raw in enumerate(fin, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            records.append(EvalRecord.from_json(obj, lineno))
    return records
