"""Preference-pair construction and a reference MPO loss calculator.

High-temperature candidates are sampled per input and split into
correct/incorrect by a deterministic rule; a pair is built only when the
model is inconsistent on the input (both classes present). The chosen
side is the highest-reward correct candidate, the rejected side the
highest-reward incorrect one, i.e. plausible but wrong.

mpo_loss is a scalar calculator for validating external trainers: a
weighted sum of a DPO-style preference term, a BCO-style quality term
with reward shift delta, and a generation (language-modeling) term.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

from .corpus import MediaRef, Sample
from .gateway import (GatewayFault, GeneratedAnswer, ScorerGateway,
                      SampleView, candidate_variant)

RULE_KINDS = ("exact_match", "choice_letter", "numeric_tolerance", "regex")

_CHOICE_RE = re.compile(r"\b([A-Ha-h])\b")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


@dataclass(frozen=True)
class RuleReward:
    """Deterministic correct/incorrect judge against a target answer."""

    kind: str
    target: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind '{self.kind}'")
        if self.kind == "numeric_tolerance":
            float(self.target)  # must parse
            if self.epsilon < 0:
                raise ValueError("epsilon must be >= 0")
        if self.kind == "regex":
            re.compile(self.target)

    def is_correct(self, text: str) -> bool:
        if self.kind == "exact_match":
            return text.strip() == self.target.strip()
        if self.kind == "choice_letter":
            m = _CHOICE_RE.search(text)
            return bool(m) and m.group(1).upper() == self.target.strip().upper()
        if self.kind == "numeric_tolerance":
            m = _NUMBER_RE.search(text)
            if not m:
                return False
            return abs(float(m.group(0)) - float(self.target)) <= self.epsilon
        return re.search(self.target, text) is not None


@dataclass(frozen=True)
class PreferencePair:
    sample_id: str
    question: str
    media: tuple[MediaRef, ...]
    chosen: GeneratedAnswer
    rejected: GeneratedAnswer
    chosen_score: float
    rejected_score: float

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "question": self.question,
            "media": [m.to_json() for m in self.media],
            "chosen": self.chosen.text,
            "rejected": self.rejected.text,
            "chosen_score": self.chosen_score,
            "rejected_score": self.rejected_score,
        }


@dataclass(frozen=True)
class SkippedSample:
    sample_id: str
    reason: str  # "uniformly-correct" | "uniformly-incorrect" | "no-candidates"


def sample_candidates(
    sample: Sample,
    count: int,
    temperature: float,
    gateway: ScorerGateway,
) -> list[GeneratedAnswer]:
    """count high-temperature candidates; gateway faults shorten the list."""
    if count < 2:
        raise ValueError("candidate sampling needs count >= 2")
    if temperature <= 0:
        raise ValueError("candidate sampling needs temperature > 0")
    try:
        return gateway.generate(
            SampleView.of(sample), "candidate", count=count, temperature=temperature)
    except GatewayFault:
        return []


def build_pair(
    sample: Sample,
    candidates: Sequence[GeneratedAnswer],
    rule: RuleReward,
    gateway: ScorerGateway,
) -> PreferencePair | SkippedSample:
    """Pair the best correct candidate against the best incorrect one.

    Scores come from the reward model; correctness comes from the rule.
    Argmax ties break on the lowest candidate index. Uniformly correct or
    incorrect candidate sets are skipped: those inputs carry no
    preference signal.
    """
    if not candidates:
        return SkippedSample(sample.id, "no-candidates")

    scored: list[tuple[int, GeneratedAnswer, float, bool]] = []
    for index, cand in enumerate(candidates):
        record = gateway.score(
            SampleView.of(sample, answer=cand.text), candidate_variant(index))
        scored.append((index, cand, record.score, rule.is_correct(cand.text)))

    correct = [(i, c, r) for i, c, r, ok in scored if ok]
    incorrect = [(i, c, r) for i, c, r, ok in scored if not ok]
    if not incorrect:
        return SkippedSample(sample.id, "uniformly-correct")
    if not correct:
        return SkippedSample(sample.id, "uniformly-incorrect")

    def best(entries: list[tuple[int, GeneratedAnswer, float]]):
        return max(entries, key=lambda e: (e[2], -e[0]))

    _, chosen, chosen_score = best(correct)
    _, rejected, rejected_score = best(incorrect)
    return PreferencePair(
        sample_id=sample.id,
        question=sample.question,
        media=sample.media,
        chosen=chosen,
        rejected=rejected,
        chosen_score=chosen_score,
        rejected_score=rejected_score,
    )


@dataclass(frozen=True)
class MpoWeights:
    w1: float = 0.8  # preference
    w2: float = 0.1  # quality
    w3: float = 0.1  # generation

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise ValueError("weights must be finite and nonnegative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class MpoLoss:
    total: float
    preference: float
    quality: float
    generation: float


def log_sigmoid(x: float) -> float:
    """log(sigmoid(x)) without overflow for large |x|."""
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def mpo_loss(
    *,
    policy_chosen: float,
    policy_rejected: float,
    ref_chosen: float,
    ref_rejected: float,
    beta: float,
    delta: float = 0.0,
    chosen_token_logprobs: Sequence[float] = (),
    weights: MpoWeights = MpoWeights(),
) -> MpoLoss:
    """Weighted sum of preference, quality, and generation losses.

    preference: -log sig(beta * [(pc - rc) - (pr - rr)]), the DPO form;
    ln 2 at zero margin, strictly decreasing in the margin.
    quality: -log sig(beta*(pc - rc) - delta) - log sig(-(beta*(pr - rr) - delta)),
    the BCO form with an explicit reward shift delta.
    generation: -mean(chosen token logprobs); 0 when no logprobs given.
    """
    inputs = [policy_chosen, policy_rejected, ref_chosen, ref_rejected, beta, delta,
              *chosen_token_logprobs]
    if any(not math.isfinite(v) for v in inputs):
        raise ValueError("mpo_loss requires finite inputs")
    if beta <= 0:
        raise ValueError("beta must be positive")

    chosen_lift = policy_chosen - ref_chosen
    rejected_lift = policy_rejected - ref_rejected
    l_pref = -log_sigmoid(beta * (chosen_lift - rejected_lift))
    l_quality = -log_sigmoid(beta * chosen_lift - delta) - log_sigmoid(-(beta * rejected_lift - delta))
    l_gen = -sum(chosen_token_logprobs) / len(chosen_token_logprobs) if chosen_token_logprobs else 0.0
    total = weights.w1 * l_pref + weights.w2 * l_quality + weights.w3 * l_gen
    return MpoLoss(total=total, preference=l_pref, quality=l_quality, generation=l_gen)
