import math
import random

import pytest

from quadpipe.corpus import CorpusError, CorpusSnapshot, MediaRef, Sample
from quadpipe.gateway import ScorerGateway
from quadpipe.mock import MockWorker
from quadpipe.quality import (
    QualityConfig,
    evaluate,
    percentile_threshold,
    run_stage,
)

from conftest import FlakyWorker, build_corpus, build_sample
from oracles import percentile_threshold as oracle_threshold
from oracles import quality_scores


def test_percentile_threshold_examples():
    decile_scores = [round(0.1 * k, 1) for k in range(1, 11)]
    assert percentile_threshold(decile_scores, 30) == 0.8
    assert percentile_threshold([0.5] * 6, 10) == 0.5
    assert percentile_threshold([0.7], 50) == 0.7


def test_percentile_threshold_tie_expansion():
    scores = [0.9, 0.8, 0.8, 0.8, 0.1]
    assert percentile_threshold(scores, 20) == 0.9
    tau = percentile_threshold(scores, 40)
    assert tau == 0.8
    assert sum(1 for r in scores if r >= tau) == 4


def test_percentile_threshold_matches_scan_oracle():
    rng = random.Random(0)
    percentiles = [1, 10, 25, 30, 100 / 3, 50, 200 / 3, 75, 99, 100]
    for _ in range(200):
        n = rng.randint(1, 40)
        scores = [round(rng.random(), 2) for _ in range(n)]
        p = rng.choice(percentiles)
        assert percentile_threshold(scores, p) == oracle_threshold(scores, p)


def test_percentile_threshold_validation():
    with pytest.raises(ValueError):
        percentile_threshold([], 50)
    with pytest.raises(ValueError):
        percentile_threshold([0.5], 0)
    with pytest.raises(ValueError):
        percentile_threshold([0.5], 101)


def test_evaluate_decisions():
    keep = evaluate(0.9, 0.2, tau=0.5, tau_abar=0.3)
    assert keep.keep and keep.reason == ""
    low_reward = evaluate(0.4, 0.0, tau=0.5, tau_abar=0.3)
    assert not low_reward.keep and low_reward.reason == "low-reward"
    low_margin = evaluate(0.9, 0.75, tau=0.5, tau_abar=0.3)
    assert not low_margin.keep and low_margin.reason == "low-margin"
    both = evaluate(0.4, 0.39, tau=0.5, tau_abar=0.3)
    assert both.reason == "low-reward"
    with pytest.raises(ValueError):
        evaluate(math.nan, 0.0, tau=0.5, tau_abar=0.3)
    with pytest.raises(ValueError):
        evaluate(0.5, math.inf, tau=0.5, tau_abar=0.3)


def test_quality_config_validation():
    with pytest.raises(ValueError):
        QualityConfig(threshold_mode="absolute", tau_abar=0.0)
    with pytest.raises(ValueError):
        QualityConfig(threshold_mode="percentile", tau_abar=0.0)
    with pytest.raises(ValueError):
        QualityConfig(threshold_mode="percentile", tau_abar=0.0, p=0)
    with pytest.raises(ValueError):
        QualityConfig(threshold_mode="percentile", tau_abar=0.0, p=100)
    with pytest.raises(ValueError):
        QualityConfig(threshold_mode="sideways", tau_abar=0.0, tau=0.5)
    with pytest.raises(ValueError):
        QualityConfig(threshold_mode="absolute", tau=0.5, tau_abar=math.nan)


def test_run_stage_matches_oracle_replay(gateway):
    corpus = build_corpus(24, mixed=True)
    config = QualityConfig(threshold_mode="percentile", p=25, tau_abar=0.0)
    result = run_stage(corpus, config, gateway)

    expected = {s.id: quality_scores(s, seed=7) for s in corpus}
    tau = oracle_threshold([r_a for r_a, _ in expected.values()], 25)
    expected_kept = sorted(
        sid for sid, (r_a, r_abar) in expected.items()
        if r_a >= tau and r_a - r_abar >= 0.0)

    assert result.details["tau"] == tau
    assert [s.id for s in result.snapshot] == expected_kept
    assert result.snapshot.name == "quality"
    assert result.snapshot.parent == corpus.name
    assert not result.quarantined

    by_id = {entry.sample_id: entry for entry in result.audit}
    assert set(by_id) == set(expected)
    for sid, (r_a, r_abar) in expected.items():
        entry = by_id[sid]
        assert entry.scores["r_a"] == r_a
        assert entry.scores["r_abar"] == r_abar
        assert entry.scores["tau"] == tau
        assert entry.decision == ("kept" if sid in expected_kept else "dropped")


def test_run_stage_vacuous_threshold_keeps_all(gateway):
    corpus = build_corpus(12, mixed=True)
    config = QualityConfig(threshold_mode="absolute", tau=-1.0, tau_abar=-10.0)
    result = run_stage(corpus, config, gateway)
    assert [s.id for s in result.snapshot] == [s.id for s in corpus]


def test_run_stage_output_is_subset(gateway):
    corpus = build_corpus(20)
    config = QualityConfig(threshold_mode="percentile", p=50, tau_abar=0.0)
    result = run_stage(corpus, config, gateway)
    input_ids = {s.id for s in corpus}
    assert {s.id for s in result.snapshot} <= input_ids
    assert len(result.snapshot) <= len(corpus)


def test_run_stage_thread_count_does_not_change_output(gateway):
    corpus = build_corpus(16, mixed=True)
    config = QualityConfig(threshold_mode="percentile", p=40, tau_abar=0.0)
    single = run_stage(corpus, config, gateway)
    threaded = run_stage(corpus, config, ScorerGateway.with_mock(seed=7), threads=4)
    assert [s.id for s in threaded.snapshot] == [s.id for s in single.snapshot]
    assert threaded.details["tau"] == single.details["tau"]


def test_run_stage_quarantines_faulted_samples():
    corpus = build_corpus(8)
    target = corpus.samples[3]
    flaky = FlakyWorker(
        MockWorker(seed=7),
        lambda op, payload: op == "reward" and payload["question"] == target.question)
    gw = ScorerGateway({role: flaky for role in
                        ("reward", "generator", "reference", "embedder", "classifier")},
                       retry_base_delay=0.0)
    config = QualityConfig(threshold_mode="absolute", tau=-1.0, tau_abar=-10.0)
    result = run_stage(corpus, config, gw)

    assert result.quarantined == {target.id: "quarantine:worker-fault"}
    assert target.id not in {s.id for s in result.snapshot}
    assert len(result.snapshot) == len(corpus) - 1
    entry = next(e for e in result.audit if e.sample_id == target.id)
    assert entry.decision == "dropped"
    assert entry.reason == "quarantine:worker-fault"


def test_run_stage_rejects_answerless_samples(gateway):
    bare = Sample(id="s1", question="What now?", answer=None,
                  media=(MediaRef(kind="image", uri="img://1"),))
    corpus = CorpusSnapshot(name="raw", samples=[build_sample(0), bare])
    config = QualityConfig(threshold_mode="absolute", tau=0.0, tau_abar=0.0)
    with pytest.raises(CorpusError):
        run_stage(corpus, config, gateway)
