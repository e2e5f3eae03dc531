import math

import pytest

from quadpipe.corpus import CorpusSnapshot, MediaRef, Sample
from quadpipe.gateway import ScorerGateway
from quadpipe.wire import WorkerError


def build_sample(i: int, modality: str = "single-image", answer: str | None = None) -> Sample:
    media: tuple[MediaRef, ...]
    if modality == "single-image":
        media = (MediaRef(kind="image", uri=f"img://{i}"),)
    elif modality == "multi-image":
        media = (MediaRef(kind="image", uri=f"img://{i}a"), MediaRef(kind="image", uri=f"img://{i}b"))
    elif modality == "video":
        media = (MediaRef(kind="video", uri=f"vid://{i}", fps=1.0, max_frames=8),)
    elif modality == "pure-text":
        media = ()
    else:
        raise ValueError(modality)
    return Sample(
        id=f"s{i:05d}",
        question=f"What is in scene {i}?",
        answer=answer if answer is not None else f"object {i % 13}",
        media=media,
    )


def build_corpus(n: int, name: str = "raw", mixed: bool = False) -> CorpusSnapshot:
    samples = []
    for i in range(n):
        if mixed:
            modality = ("single-image", "multi-image", "video", "pure-text")[i % 4]
        else:
            modality = "single-image"
        samples.append(build_sample(i, modality))
    return CorpusSnapshot(name=name, samples=samples)


class FlakyWorker:
    """Delegates to an inner worker but fails selected calls."""

    def __init__(self, inner, should_fail, code="worker-fault", retryable=False, times=math.inf):
        self.inner = inner
        self.should_fail = should_fail
        self.code = code
        self.retryable = retryable
        self.times = times
        self.model_id = inner.model_id
        self.capabilities = inner.capabilities
        self.batch_limit = inner.batch_limit
        self.failed = 0

    @property
    def calls(self):
        return self.inner.calls

    def call(self, op, payload):
        if self.failed < self.times and self.should_fail(op, payload):
            self.failed += 1
            raise WorkerError(self.code, "injected failure", retryable=self.retryable)
        return self.inner.call(op, payload)


@pytest.fixture
def gateway() -> ScorerGateway:
    return ScorerGateway.with_mock(seed=7, retry_base_delay=0.0)
