"""Prompt construction for span identification (Task A) and summarization (Task B).

Templates are UTF-8 assets shipped under ``persum/templates`` with named
placeholders {examples} {question} {context} {answers} {spans}. Rendering is
deterministic: equal inputs produce byte-identical prompts.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Sequence

from persum.corpus import PERSPECTIVE_ORDER, Thread
from persum.parsing import LabeledSpan, serialize_spans, serialize_summaries

DEFAULT_SYSTEM_PROMPT = "You are a helpful assistant."
MAX_EXEMPLARS = 5

Task = Literal["A", "B"]


class PromptError(ValueError):
    """Raised for invalid prompt-construction requests."""


@dataclass(frozen=True)
class PromptMessages:
    system: str
    user: str

    def __post_init__(self) -> None:
        if not self.system or not self.user:
            raise PromptError("system and user messages must be non-empty")


@dataclass(frozen=True)
class Exemplar:
    """A solved training instance embedded into a few-shot prompt."""

    thread: Thread
    task: Task

    def __post_init__(self) -> None:
        if self.task == "A" and not self.thread.gold_spans:
            raise PromptError(f"Task A exemplar {self.thread.id} has no gold spans")
        if self.task == "B" and not self.thread.gold_summaries:
            raise PromptError(f"Task B exemplar {self.thread.id} has no gold summaries")


def load_template(template: str) -> str:
    """Load a template by id (bundled asset) or by filesystem path."""
    path = Path(template)
    if path.suffix == ".txt" and path.exists():
        return path.read_text(encoding="utf-8")
    ref = resources.files("persum.templates").joinpath(f"{template}.txt")
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise PromptError(f"unknown template {template!r}") from None


def _question_block(thread: Thread) -> str:
    return f"Question: {thread.question}\n"


def _context_block(thread: Thread) -> str:
    if not thread.context:
        return ""
    return f"Context: {thread.context}\n"


def _answers_block(thread: Thread) -> str:
    lines = ["Answers:"]
    for i, answer in enumerate(thread.answers, start=1):
        lines.append(f"{i}. {answer}")
    return "\n".join(lines) + "\n"


def _spans_block(spans: Sequence[LabeledSpan]) -> str:
    lines = ["Spans:"]
    for p in PERSPECTIVE_ORDER:
        group = [s for s in spans if s.label is p]
        if not group:
            continue
        lines.append(f"{p.value}:")
        lines.extend(f'- "{s.text}"' for s in group)
    return "\n".join(lines) + "\n"


def render_exemplar(exemplar: Exemplar, task: Task) -> str:
    """Render one few-shot example: inputs followed by gold outputs in the
    same grammar the model must emit."""
    if exemplar.task != task:
        raise PromptError(
            f"exemplar for task {exemplar.task} cannot be rendered for task {task}"
        )
    thread = exemplar.thread
    parts = [_question_block(thread), _context_block(thread)]
    if task == "A":
        parts.append(_answers_block(thread))
        parts.append("Output:\n" + serialize_spans(thread.gold_spans) + "\n")
    else:
        gold = [LabeledSpan(text=s.text, label=s.label) for s in thread.gold_spans]
        parts.append(_spans_block(gold))
        parts.append("Output:\n" + serialize_summaries(thread.gold_summaries) + "\n")
    return "".join(parts)


def _examples_block(exemplars: Sequence[Exemplar], task: Task) -> str:
    if not exemplars:
        return ""
    if len(exemplars) > MAX_EXEMPLARS:
        raise PromptError(f"at most {MAX_EXEMPLARS} exemplars allowed, got {len(exemplars)}")
    blocks = []
    for i, exemplar in enumerate(exemplars, start=1):
        blocks.append(f"Example {i}:\n{render_exemplar(exemplar, task)}")
    return "\n".join(blocks) + "\nNow solve the following instance.\n\n"


def build_task_a_prompt(
    thread: Thread,
    exemplars: Sequence[Exemplar] = (),
    template: str = "task_a_default",
    system: str = DEFAULT_SYSTEM_PROMPT,
) -> PromptMessages:
    user = load_template(template).format(
        examples=_examples_block(exemplars, "A"),
        question=_question_block(thread),
        context=_context_block(thread),
        answers=_answers_block(thread),
    )
    return PromptMessages(system=system, user=user)


def build_task_b_prompt(
    thread: Thread,
    spans: Sequence[LabeledSpan],
    exemplars: Sequence[Exemplar] = (),
    template: str = "task_b_default",
    system: str = DEFAULT_SYSTEM_PROMPT,
) -> PromptMessages:
    if not spans:
        raise PromptError("Task B prompt requires at least one span to summarize")
    user = load_template(template).format(
        examples=_examples_block(exemplars, "B"),
        question=_question_block(thread),
        context=_context_block(thread),
        spans=_spans_block(spans),
    )
    return PromptMessages(system=system, user=user)
