"""Stub backend: documented validation rules and derivation equalities."""

import json

import pytest

from model_adapter.hashing import bucket, hex_digest, unit_interval, vector
from model_adapter.server import BadRequest
from model_adapter.stub import DEFAULT_DIM, StubBackend


@pytest.fixture
def backend() -> StubBackend:
    return StubBackend()


def test_reward_score_matches_derived_value(backend):
    result = backend.handle("reward", {"question": "q", "answer": "a"})
    assert result == {"score": unit_interval(0, ["reward", "answer", "q", "a"])}
    assert result["score"] == 0.48452251412958947


def test_reward_variant_defaults_to_answer(backend):
    implicit = backend.handle("reward", {"question": "q", "answer": "a"})
    explicit = backend.handle("reward", {"question": "q", "answer": "a", "variant": "answer"})
    assert implicit == explicit


def test_reward_media_uris_enter_in_request_order(backend):
    media = [{"kind": "image", "uri": "img://1"}, {"kind": "video", "uri": "vid://2"}]
    result = backend.handle("reward", {"question": "q", "answer": "a", "media": media})
    assert result == {"score": unit_interval(0, ["reward", "answer", "q", "a", "img://1", "vid://2"])}
    swapped = backend.handle("reward", {"question": "q", "answer": "a", "media": media[::-1]})
    assert swapped != result


def test_media_field_edge_shapes_hash_predictably(backend):
    base = backend.handle("reward", {"question": "q", "answer": "a"})
    assert backend.handle("reward", {"question": "q", "answer": "a", "media": "nope"}) == base
    assert backend.handle("reward", {"question": "q", "answer": "a", "media": ["bare"]}) == base
    missing_uri = backend.handle("reward", {"question": "q", "answer": "a", "media": [{"kind": "image"}]})
    empty_uri = backend.handle(
        "reward", {"question": "q", "answer": "a", "media": [{"kind": "image", "uri": ""}]}
    )
    assert missing_uri == empty_uri != base
    with_frames = {"question": "q", "answer": "a", "media": [{"kind": "video", "uri": "v://1", "frames": 9}]}
    without_frames = {"question": "q", "answer": "a", "media": [{"kind": "video", "uri": "v://1"}]}
    assert backend.handle("reward", with_frames) == backend.handle("reward", without_frames)


def test_unexpected_values_are_hashed_not_rejected(backend):
    tagged = backend.handle("reward", {"question": "q", "answer": "a", "variant": 7})
    assert tagged == {"score": unit_interval(0, ["reward", 7, "q", "a"])}
    ablated = backend.handle(
        "generate",
        {"question": "q", "mode": "vision_ablated", "media": [{"kind": "image", "uri": "u1"}]},
    )
    digest = hex_digest(0, ["generate", "vision_ablated", "q", 0, 0.0, "u1"])
    assert ablated == {"answers": [{"text": "mock answer " + digest[:12]}]}


def test_generate_count_and_text_shape(backend):
    result = backend.handle("generate", {"question": "Name a fruit.", "mode": "reference", "count": 3})
    assert len(result["answers"]) == 3
    for index, answer in enumerate(result["answers"]):
        digest = hex_digest(0, ["generate", "reference", "Name a fruit.", index, 0.0])
        assert answer == {"text": "mock answer " + digest[:12]}


def test_generate_synthesis_emits_compact_json_answers(backend):
    payload = {"question": "", "mode": "synthesis", "cues": ["kitchen", "morning light"]}
    result = backend.handle("generate", payload)
    text = result["answers"][0]["text"]
    digest = hex_digest(0, ["generate", "synthesis", "", 0, 0.0, "kitchen", "morning light"])
    parsed = json.loads(text)
    assert list(parsed) == ["question", "answer"]
    assert parsed["question"] == "mock question " + digest[12:24]
    assert parsed["answer"] == "mock answer " + digest[:12]
    assert text == json.dumps(parsed, separators=(",", ":"), ensure_ascii=False)


def test_generate_defaults(backend):
    implicit = backend.handle("generate", {"question": "x"})
    explicit = backend.handle(
        "generate", {"question": "x", "mode": "reference", "count": 1, "temperature": 0.0, "cues": []}
    )
    assert implicit == explicit
    assert implicit == backend.handle("generate", {"question": "x", "cues": None})
    assert implicit == backend.handle("generate", {"question": "x", "temperature": 0})


def test_generate_question_defaults_to_empty(backend):
    assert backend.handle("generate", {}) == backend.handle("generate", {"question": ""})


def test_generate_cue_values_enter_verbatim(backend):
    ab = backend.handle("generate", {"question": "q", "cues": ["a", "b"]})
    ba = backend.handle("generate", {"question": "q", "cues": ["b", "a"]})
    joined = backend.handle("generate", {"question": "q", "cues": ["ab"]})
    assert ab != ba
    assert ab != joined


def test_generate_count_true_counts_as_one(backend):
    assert backend.handle("generate", {"question": "q", "count": True}) == backend.handle(
        "generate", {"question": "q", "count": 1}
    )


def test_embed_defaults_and_dim(backend):
    result = backend.handle("embed", {})
    assert result == {"vector": vector(0, ["embed", DEFAULT_DIM, "", ""], DEFAULT_DIM)}
    assert result["vector"][0] == 0.7440764270852207
    assert result == backend.handle("embed", {"question": "", "answer": ""})
    narrow = StubBackend(dim=8).handle("embed", {"question": "q", "answer": "a"})
    assert narrow == {"vector": vector(0, ["embed", 8, "q", "a"], 8)}
    assert len(narrow["vector"]) == 8


def test_classify_levels_shape(backend):
    assert backend.handle("classify", {"question": "What color is the sky?"}) == {"levels": ["cap-1"]}
    for index in range(20):
        question = f"probe question {index}"
        levels = backend.handle("classify", {"question": question})["levels"]
        assert levels == ["cap-" + str(bucket(0, ["classify", question], 10))]


def test_seed_scopes_every_op(backend):
    other = StubBackend(seed=1)
    probes = [
        ("reward", {"question": "q", "answer": "a"}),
        ("generate", {"question": "q"}),
        ("embed", {"question": "q", "answer": "a"}),
        ("classify", {"question": "q"}),
    ]
    for op, payload in probes:
        assert backend.handle(op, payload) != other.handle(op, payload)


@pytest.mark.parametrize(
    ("op", "payload", "detail"),
    [
        ("reward", {"answer": "a"}, "'question' must be a nonempty string"),
        ("reward", {"question": "", "answer": "a"}, "'question' must be a nonempty string"),
        ("reward", {"question": 7, "answer": "a"}, "'question' must be a nonempty string"),
        ("reward", {"question": "q", "answer": ""}, "'answer' must be a nonempty string"),
        ("reward", {"question": "q"}, "'answer' must be a nonempty string"),
        ("generate", {"question": None}, "'question' must be a string"),
        ("generate", {"question": "q", "count": 0}, "'count' must be a positive integer"),
        ("generate", {"question": "q", "count": -2}, "'count' must be a positive integer"),
        ("generate", {"question": "q", "count": "3"}, "'count' must be a positive integer"),
        ("generate", {"question": "q", "count": 1.5}, "'count' must be a positive integer"),
        ("embed", {"question": 7}, "'question' must be a string"),
        ("embed", {"answer": 7}, "'answer' must be a string"),
        ("classify", {}, "'question' must be a nonempty string"),
        ("classify", {"question": ""}, "'question' must be a nonempty string"),
    ],
)
def test_validation_rules(backend, op, payload, detail):
    with pytest.raises(BadRequest) as err:
        backend.handle(op, payload)
    assert str(err.value) == detail
