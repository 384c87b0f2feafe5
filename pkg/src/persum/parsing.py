"""Parse model completions into labeled spans and per-perspective summaries.

The canonical output grammars are one item per line:

    span: "<extracted text>", label: "<perspective>"
    <LABEL> Summary: <text>

Parsing never raises on arbitrary input; it returns values plus warnings.
Lenient mode additionally tolerates smart quotes, bullet prefixes, and
JSON-array renderings of the span list.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal

from persum.corpus import PERSPECTIVE_ORDER, Perspective, Thread

Policy = Literal["strict", "lenient"]

_QUOTE = "\"'“”‘’«»`"

_SPAN_LINE = re.compile(
    rf"""["{_QUOTE}\s\-\*\d\.\)>]*          # bullet / numbering prefix
         span\s*[:=]\s*
         ["{_QUOTE}]?(?P<text>.*?)["{_QUOTE}]?\s*
         [,;]\s*
         ["{_QUOTE}]?label["{_QUOTE}]?\s*[:=]\s*
         ["{_QUOTE}]?(?P<label>[A-Za-z_\s,/]+?)["{_QUOTE}]?\s*[\}}\]]*\s*,?\s*$
    """,
    re.IGNORECASE | re.VERBOSE,
)

_SUMMARY_LINE = re.compile(
    rf"""^\s*[\*#\-\d\.\)]*\s*
         ["{_QUOTE}]?(?P<label>[A-Za-z]+)["{_QUOTE}]?\s*
         (?:perspective\s*)?summary\s*[:=]\s*
         (?P<text>.+?)\s*$
    """,
    re.IGNORECASE | re.VERBOSE,
)

# Bare heading such as "EXPERIENCE:" or "**EXPERIENCE**" preceding a
# 'Summary: "..."' line (the alternate grammar from the prompt templates).
_HEADING_LINE = re.compile(
    r"""^\s*[\*#\-]*\s*(?P<label>[A-Za-z]+)\s*[\*#]*\s*:?\s*$""",
    re.VERBOSE,
)

_BARE_SUMMARY_LINE = re.compile(
    rf"""^\s*[\*\-]*\s*summary\s*[:=]\s*(?P<text>.+?)\s*$""",
    re.IGNORECASE | re.VERBOSE,
)


@dataclass(frozen=True)
class LabeledSpan:
    """A predicted span; offsets are present only when grounded to an answer."""

    text: str
    label: Perspective
    answer_index: int | None = None
    start: int | None = None
    end: int | None = None

    @property
    def grounded(self) -> bool:
        return self.answer_index is not None and self.start is not None and self.end is not None


def _strip_quotes(text: str) -> str:
    return text.strip().strip(_QUOTE).strip()


def _parse_labels(raw: str) -> tuple[list[Perspective], list[str]]:
    labels, unknown = [], []
    for part in re.split(r"[,/]", raw):
        part = part.strip()
        if not part:
            continue
        try:
            labels.append(Perspective[part.upper().replace(" ", "_")])
        except KeyError:
            unknown.append(part)
    return labels, unknown


def ground_span(span: LabeledSpan, thread: Thread) -> LabeledSpan | None:
    """Locate a span by first occurrence across the thread's answers."""
    for answer_index, answer in enumerate(thread.answers):
        start = answer.find(span.text)
        if start >= 0:
            return replace(span, answer_index=answer_index, start=start, end=start + len(span.text))
    return None


def _spans_from_json(raw: str) -> list[tuple[str, str]] | None:
    # Lenient path: the whole output (or a fenced block) is a JSON array of
    # {"span": ..., "label": ...} objects.
    candidates = [raw.strip()]
    for block in re.findall(r"```(?:json)?\s*(.*?)```", raw, re.DOTALL):
        candidates.append(block.strip())
    match = re.search(r"\[.*\]", raw, re.DOTALL)
    if match:
        candidates.append(match.group(0))
    for candidate in candidates:
        if not candidate.startswith("["):
            continue
        try:
            data = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(data, list) and all(isinstance(item, dict) for item in data):
            pairs = []
            for item in data:
                text = item.get("span") or item.get("text")
                label = item.get("label") or item.get("perspective")
                if isinstance(text, str) and isinstance(label, str):
                    pairs.append((text, label))
            if pairs:
                return pairs
    return None


def parse_spans(
    raw: str,
    thread: Thread | None = None,
    policy: Policy = "lenient",
) -> tuple[list[LabeledSpan], list[str]]:
    """Extract labeled spans from a model completion.

    Spans are grounded to (answer_index, start, end) by first-occurrence search
    when a thread is supplied. Ungroundable spans are kept without offsets in
    lenient mode and dropped with a warning in strict mode.
    """
    warnings: list[str] = []
    pairs: list[tuple[str, str]] = []
    for line in raw.splitlines():
        match = _SPAN_LINE.search(line)
        if match:
            pairs.append((match.group("text"), match.group("label")))
    if not pairs and policy == "lenient":
        pairs = _spans_from_json(raw) or []

    spans: list[LabeledSpan] = []
    for text, raw_label in pairs:
        text = _strip_quotes(text)
        if not text:
            warnings.append("skipped span line with empty text")
            continue
        labels, unknown = _parse_labels(raw_label)
        for bad in unknown:
            warnings.append(f"skipped unknown label {bad!r}")
        for label in labels:
            span = LabeledSpan(text=text, label=label)
            if thread is not None:
                grounded = ground_span(span, thread)
                if grounded is not None:
                    span = grounded
                elif policy == "strict":
                    warnings.append(f"dropped ungroundable span {text[:40]!r}")
                    continue
                else:
                    warnings.append(f"span not found in any answer: {text[:40]!r}")
            spans.append(span)
    if not spans:
        warnings.append("no parseable span lines in output")
    return spans, warnings


def parse_summaries(raw: str) -> tuple[dict[Perspective, str], list[str]]:
    """Extract per-perspective summaries; duplicates keep the first occurrence."""
    summaries: dict[Perspective, str] = {}
    warnings: list[str] = []
    pending_label: Perspective | None = None

    def add(label: Perspective, text: str) -> None:
        text = _strip_quotes(text)
        if not text:
            warnings.append(f"skipped empty summary for {label.value}")
            return
        if label in summaries:
            warnings.append(f"duplicate summary for {label.value}; kept first")
            return
        summaries[label] = text

    for line in raw.splitlines():
        match = _SUMMARY_LINE.match(line)
        if match:
            try:
                label = Perspective[match.group("label").upper()]
            except KeyError:
                warnings.append(f"skipped unknown summary label {match.group('label')!r}")
                pending_label = None
                continue
            add(label, match.group("text"))
            pending_label = None
            continue
        bare = _BARE_SUMMARY_LINE.match(line)
        if bare:
            if pending_label is not None:
                add(pending_label, bare.group("text"))
                pending_label = None
            else:
                warnings.append("Summary line without a preceding perspective heading")
            continue
        heading = _HEADING_LINE.match(line)
        if heading:
            try:
                pending_label = Perspective[heading.group("label").upper()]
            except KeyError:
                pending_label = None
    if not summaries:
        warnings.append("no recognized summary lines in output")
    return summaries, warnings


def serialize_spans(spans: Iterable[LabeledSpan]) -> str:
    """Render spans in the canonical output grammar, one per line."""
    return "\n".join(f'span: "{s.text}", label: "{s.label.value}"' for s in spans)


def serialize_summaries(summaries: dict[Perspective, str]) -> str:
    """Render summaries one per line, perspectives in canonical order."""
    return "\n".join(
        f"{p.value} Summary: {summaries[p]}" for p in PERSPECTIVE_ORDER if p in summaries
    )


@dataclass
class PredictionRecord:
    """One line of the predictions hand-off file."""

    thread_id: str
    task: str  # "A" or "B"
    spans: list[LabeledSpan] = field(default_factory=list)
    summaries: dict[Perspective, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        record: dict = {"thread_id": self.thread_id, "task": self.task, "warnings": self.warnings}
        if self.task == "A":
            record["spans"] = [
                {
                    "text": s.text,
                    "label": s.label.value,
                    "answer_index": s.answer_index,
                    "start": s.start,
                    "end": s.end,
                }
                for s in self.spans
            ]
        else:
            record["summaries"] = {p.value: t for p, t in self.summaries.items()}
        return record

    @classmethod
    def from_json(cls, record: dict) -> "PredictionRecord":
        spans = [
            LabeledSpan(
                text=s["text"],
                label=Perspective.parse(s["label"]),
                answer_index=s.get("answer_index"),
                start=s.get("start"),
                end=s.get("end"),
            )
            for s in record.get("spans", [])
        ]
        summaries = {
            Perspective.parse(label): text for label, text in record.get("summaries", {}).items()
        }
        return cls(
            thread_id=record["thread_id"],
            task=record["task"],
            spans=spans,
            summaries=summaries,
            warnings=list(record.get("warnings", [])),
        )


def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(PredictionRecord.from_json(json.loads(line)))
    return records
