"""Corpus ingestion, validation, and splitting.

Canonical file schema (UTF-8 JSON array or JSON-Lines, one thread per record):

    {
      "id": "t1",
      "question": "...",
      "context": "...",            # optional
      "answers": ["...", "..."],
      "spans": [{"answer_index": 0, "start": 3, "end": 10,
                 "text": "...", "label": "CAUSE"}],
      "summaries": {"CAUSE": "..."}
    }

Span offsets are optional: a span given only as text is located by first
occurrence within its answer. Offsets count Unicode scalar values.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

logger = logging.getLogger(__name__)

# Official corpus split sizes, recorded in run metadata for provenance.
OFFICIAL_SPLIT_SIZES = {"train": 2236, "valid": 959, "test": 50}


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus data."""


class Perspective(enum.Enum):
    """The closed set of five perspective labels."""

    EXPERIENCE = "EXPERIENCE"
    INFORMATION = "INFORMATION"
    CAUSE = "CAUSE"
    SUGGESTION = "SUGGESTION"
    QUESTION = "QUESTION"

    @classmethod
    def parse(cls, raw: str) -> "Perspective":
        try:
            return cls[raw.strip().upper()]
        except KeyError:
            raise CorpusError(f"unknown perspective label: {raw!r}") from None

    def __str__(self) -> str:  # pragma: no cover - trivial
        return self.value


#: Canonical label ordering used for serialization, reports, and matrices.
PERSPECTIVE_ORDER: tuple[Perspective, ...] = tuple(Perspective)


@dataclass(frozen=True)
class GoldSpan:
    """A gold-annotated span within one answer of a thread."""

    answer_index: int
    start: int
    end: int
    text: str
    label: Perspective

    def validate_against(self, answers: tuple[str, ...], thread_id: str) -> None:
        if not (0 <= self.answer_index < len(answers)):
            raise CorpusError(
                f"thread {thread_id}: span answer_index {self.answer_index} out of range"
            )
        answer = answers[self.answer_index]
        if not (0 <= self.start < self.end <= len(answer)):
            raise CorpusError(
                f"thread {thread_id}: span offsets [{self.start}, {self.end}) invalid "
                f"for answer of length {len(answer)}"
            )
        if answer[self.start : self.end] != self.text:
            raise CorpusError(
                f"thread {thread_id}: span text does not match answer substring "
                f"at [{self.start}, {self.end})"
            )


@dataclass(frozen=True)
class Thread:
    """One community-QA instance with gold annotations."""

    id: str
    question: str
    answers: tuple[str, ...]
    context: str | None = None
    gold_spans: tuple[GoldSpan, ...] = ()
    gold_summaries: dict[Perspective, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.answers:
            raise CorpusError(f"thread {self.id}: answers must be non-empty")
        for span in self.gold_spans:
            span.validate_against(self.answers, self.id)
        span_labels = {s.label for s in self.gold_spans}
        for label in self.gold_summaries:
            if label not in span_labels:
                raise CorpusError(
                    f"thread {self.id}: summary for {label.value} has no gold span "
                    "with that label"
                )


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/valid/test partition sizes."""

    train_count: int
    valid_count: int
    test_count: int

    def validate(self, total: int) -> None:
        counts = (self.train_count, self.valid_count, self.test_count)
        if any(c < 0 for c in counts):
            raise CorpusError(f"split counts must be non-negative, got {counts}")
        if sum(counts) != total:
            raise CorpusError(
                f"split counts {counts} sum to {sum(counts)}, corpus has {total} threads"
            )


Adapter = Callable[[dict], dict]

_ADAPTERS: dict[str, Adapter] = {}


def register_adapter(name: str, fn: Adapter) -> None:
    """Register a record adapter converting an external schema to canonical."""
    _ADAPTERS[name] = fn


def _resolve_span(record_span: dict, answers: tuple[str, ...], thread_id: str, index: int) -> GoldSpan:
    try:
        answer_index = int(record_span["answer_index"])
        text = record_span["text"]
        label = Perspective.parse(record_span["label"])
    except KeyError as exc:
        raise CorpusError(
            f"thread {thread_id}: span {index} missing field {exc.args[0]!r}"
        ) from None
    if not (0 <= answer_index < len(answers)):
        raise CorpusError(
            f"thread {thread_id}: span {index} answer_index {answer_index} out of range"
        )
    start = record_span.get("start")
    end = record_span.get("end")
    if start is None or end is None:
        answer = answers[answer_index]
        start = answer.find(text)
        if start < 0:
            raise CorpusError(
                f"thread {thread_id}: span text not found in answer {answer_index}"
            )
        end = start + len(text)
        if answer.find(text, start + 1) >= 0:
            logger.warning(
                "thread %s: span %d text occurs more than once in answer %d; "
                "using first occurrence",
                thread_id,
                index,
                answer_index,
            )
    return GoldSpan(answer_index=answer_index, start=int(start), end=int(end), text=text, label=label)


def _thread_from_record(record: dict, record_index: int) -> Thread:
    if not isinstance(record, dict):
        raise CorpusError(f"record {record_index}: expected an object")
    for required in ("id", "question", "answers"):
        if required not in record:
            raise CorpusError(f"record {record_index}: missing field {required!r}")
    thread_id = str(record["id"])
    answers = tuple(record["answers"])
    if not answers or not all(isinstance(a, str) for a in answers):
        raise CorpusError(f"record {record_index}: answers must be a non-empty list of strings")
    spans = tuple(
        _resolve_span(s, answers, thread_id, i) for i, s in enumerate(record.get("spans", []))
    )
    summaries = {
        Perspective.parse(label): text for label, text in record.get("summaries", {}).items()
    }
    thread = Thread(
        id=thread_id,
        question=record["question"],
        context=record.get("context"),
        answers=answers,
        gold_spans=spans,
        gold_summaries=summaries,
    )
    thread.validate()
    return thread


def _iter_records(path: Path) -> Iterable[dict]:
    raw = path.read_text(encoding="utf-8").strip()
    if not raw:
        return []
    if raw.startswith("["):
        data = json.loads(raw)
        if not isinstance(data, list):
            raise CorpusError(f"{path}: top-level JSON must be an array")
        return data
    records = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from None
    return records


def load_corpus(path: str | Path, schema: str = "canonical") -> list[Thread]:
    """Load and validate a corpus file into Thread values, preserving file order."""
    path = Path(path)
    adapter: Adapter | None = None
    if schema != "canonical":
        if not schema.startswith("adapter:"):
            raise CorpusError(f"unknown schema {schema!r}")
        name = schema.split(":", 1)[1]
        if name not in _ADAPTERS:
            raise CorpusError(f"no adapter registered under {name!r}")
        adapter = _ADAPTERS[name]
    threads = []
    for i, record in enumerate(_iter_records(path)):
        if adapter is not None:
            record = adapter(record)
        threads.append(_thread_from_record(record, i))
    return threads


def thread_to_record(thread: Thread) -> dict:
    record: dict = {
        "id": thread.id,
        "question": thread.question,
        "answers": list(thread.answers),
    }
    if thread.context is not None:
        record["context"] = thread.context
    record["spans"] = [
        {
            "answer_index": s.answer_index,
            "start": s.start,
            "end": s.end,
            "text": s.text,
            "label": s.label.value,
        }
        for s in thread.gold_spans
    ]
    record["summaries"] = {
        p.value: thread.gold_summaries[p] for p in PERSPECTIVE_ORDER if p in thread.gold_summaries
    }
    return record


def save_corpus(threads: Iterable[Thread], path: str | Path) -> None:
    """Write threads back to the canonical JSON-array schema."""
    records = [thread_to_record(t) for t in threads]
    Path(path).write_text(
        json.dumps(records, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def split_corpus(
    threads: list[Thread], spec: SplitSpec
) -> tuple[list[Thread], list[Thread], list[Thread]]:
    """Contiguous, order-preserving train/valid/test partition."""
    spec.validate(len(threads))
    a = spec.train_count
    b = a + spec.valid_count
    return threads[:a], threads[a:b], threads[b:]


def tail(threads: list[Thread], n: int) -> list[Thread]:
    """Last-n selector used to reproduce tail-of-split evaluation subsets."""
    if n < 0:
        raise CorpusError(f"tail size must be non-negative, got {n}")
    if n == 0:
        return []
    return threads[-n:]
