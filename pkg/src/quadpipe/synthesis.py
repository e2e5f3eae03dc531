"""Mint candidate (question, answer) samples from raw media plus cues.

The generator worker is asked, per media item, for per_item_count
question/answer pairs anchored on the supplied cues; each returned text
must be a JSON object with "question" and "answer" fields. Sample ids
are minted deterministically from (media uri, index) and the samples are
tagged source="synthesized". No quality control happens here: synthetic
pairs are noisy by construction and the curation stages are the filter.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .corpus import CorpusFormatError, MediaRef, Sample
from .gateway import GatewayFault, ScorerGateway, SampleView

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthesisJob:
    media: tuple[MediaRef, ...]
    cues: tuple[str, ...] = ()
    per_item_count: int = 1

    def __post_init__(self):
        if self.per_item_count < 1:
            raise ValueError("per_item_count must be >= 1")
        object.__setattr__(self, "media", tuple(self.media))
        object.__setattr__(self, "cues", tuple(self.cues))

    @classmethod
    def load(cls, path: str | Path) -> "SynthesisJob":
        with Path(path).open("r", encoding="utf-8") as fin:
            obj = json.load(fin)
        media = tuple(MediaRef.from_json(m) for m in obj.get("media", []))
        return cls(
            media=media,
            cues=tuple(obj.get("cues", [])),
            per_item_count=int(obj.get("per_item_count", 1)),
        )


def mint_id(uri: str, index: int) -> str:
    return f"syn:{uri}#{index}"


def _parse_pair(text: str) -> tuple[str, str]:
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("synthesis output must be a JSON object")
    question = obj.get("question")
    answer = obj.get("answer")
    if not question or not answer:
        raise ValueError("synthesis output needs nonempty 'question' and 'answer'")
    return str(question), str(answer)


def synthesize(job: SynthesisJob, gateway: ScorerGateway, *, threads: int = 1) -> list[Sample]:
    """per_item_count samples per media item; failed items are skipped."""

    def one_item(item: MediaRef) -> list[Sample]:
        view = SampleView(sample_id=item.uri, question="", media=(item,))
        generated = gateway.generate(
            view, "synthesis", count=job.per_item_count, cues=job.cues)
        samples = []
        for index, g in enumerate(generated):
            question, answer = _parse_pair(g.text)
            samples.append(Sample(
                id=mint_id(item.uri, index),
                question=question,
                answer=answer,
                media=(item,),
                source="synthesized",
            ))
        return samples

    out: list[Sample] = []
    for item in job.media:
        try:
            out.extend(one_item(item))
        except GatewayFault as exc:
            log.warning("synthesis skipped media '%s': %s", item.uri, exc)
        except (json.JSONDecodeError, ValueError, CorpusFormatError) as exc:
            log.warning("synthesis skipped media '%s': unusable generator output (%s)",
                        item.uri, exc)
    return out
