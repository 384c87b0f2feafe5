"""BIO tagging preparation math: offset tokenization, tag alignment, class
weights, and weighted cross-entropy. No model training happens here; these are
the verifiable pieces of the token-classification route.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from persum.corpus import PERSPECTIVE_ORDER, GoldSpan

#: The 11-tag set: O plus B-/I- per perspective.
BIO_TAGS = ("O",) + tuple(
    f"{prefix}-{p.value}" for p in PERSPECTIVE_ORDER for prefix in ("B", "I")
)

_TOKEN = re.compile(r"[^\W_]+|[^\w\s]", re.UNICODE)


class NerPrepError(ValueError):
    pass


@dataclass(frozen=True)
class TokenSpan:
    text: str
    start: int
    end: int


def tokenize_with_offsets(text: str) -> list[TokenSpan]:
    """Maximal alphanumeric runs plus single punctuation tokens, with offsets."""
    return [TokenSpan(m.group(0), m.start(), m.end()) for m in _TOKEN.finditer(text)]


def bio_align(tokens: Sequence[TokenSpan], spans: Sequence[GoldSpan]) -> list[str]:
    """Tag tokens that fall entirely within a span as B-/I-<label>, else O.

    Overlapping spans are resolved by earliest-start-then-longest priority.
    Offsets here are relative to the same text the tokens were produced from.
    """
    text_end = max((t.end for t in tokens), default=0)
    for span in spans:
        if span.start < 0 or span.end <= span.start or (tokens and span.start >= text_end):
            raise NerPrepError(f"span offsets [{span.start}, {span.end}) outside text")
    priority = {
        idx: rank
        for rank, idx in enumerate(
            sorted(
                range(len(spans)),
                key=lambda i: (spans[i].start, -(spans[i].end - spans[i].start)),
            )
        )
    }
    owners: list[int | None] = []
    for token in tokens:
        containing = [
            i
            for i, span in enumerate(spans)
            if token.start >= span.start and token.end <= span.end
        ]
        owners.append(min(containing, key=priority.__getitem__) if containing else None)
    tags = []
    previous_owner: int | None = None
    for owner in owners:
        if owner is None:
            tags.append("O")
        else:
            prefix = "I" if owner == previous_owner else "B"
            tags.append(f"{prefix}-{spans[owner].label.value}")
        previous_owner = owner
    return tags


def validate_bio(tags: Sequence[str]) -> bool:
    """True iff every I-tag continues a B-/I-tag of the same label."""
    previous = "O"
    for tag in tags:
        if tag not in BIO_TAGS:
            return False
        if tag.startswith("I-"):
            label = tag[2:]
            if previous not in (f"B-{label}", f"I-{label}"):
                return False
        previous = tag
    return True


@dataclass(frozen=True)
class ClassWeights:
    weights: dict[str, float]
    total_tokens: int


def class_weights(tag_counts: Mapping[str, int]) -> ClassWeights:
    """w_c = T / n_c with T the total token count over all classes."""
    if not tag_counts:
        raise NerPrepError("tag_counts must be non-empty")
    for tag, count in tag_counts.items():
        if count <= 0:
            raise NerPrepError(f"class {tag!r} has non-positive count {count}")
    total = sum(tag_counts.values())
    return ClassWeights(
        weights={tag: total / count for tag, count in tag_counts.items()},
        total_tokens=total,
    )


def weighted_cross_entropy(
    logits: Sequence[Sequence[float]],
    labels: Sequence[int],
    weights: ClassWeights,
    classes: Sequence[str] | None = None,
) -> float:
    """Mean over tokens of w_{y_i} times negative log-softmax of the true class.

    `classes` maps column index to class name; defaults to the sorted weight
    keys so small test setups need no extra bookkeeping.
    """
    Z = np.asarray(logits, dtype=float)
    y = np.asarray(labels, dtype=int)
    if Z.ndim != 2 or y.ndim != 1 or Z.shape[0] != y.shape[0]:
        raise NerPrepError(f"shape mismatch: logits {Z.shape}, labels {y.shape}")
    class_names = list(classes) if classes is not None else sorted(weights.weights)
    if Z.shape[1] != len(class_names):
        raise NerPrepError(
            f"logits have {Z.shape[1]} classes but {len(class_names)} class names given"
        )
    try:
        w = np.asarray([weights.weights[class_names[c]] for c in y])
    except KeyError as exc:
        raise NerPrepError(f"no weight for class {exc.args[0]!r}") from None
    except IndexError:
        raise NerPrepError("label index out of range") from None
    shifted = Z - Z.max(axis=1, keepdims=True)
    log_softmax = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    losses = -w * log_softmax[np.arange(len(y)), y]
    return float(losses.mean())


def export_conll(
    sequences: Sequence[tuple[Sequence[TokenSpan], Sequence[str]]]
) -> str:
    """CoNLL-style export: token and tag per line, blank line between sequences."""
    blocks = []
    for tokens, tags in sequences:
        if len(tokens) != len(tags):
            raise NerPrepError("token/tag length mismatch")
        blocks.append("\n".join(f"{t.text}\t{tag}" for t, tag in zip(tokens, tags)))
    return "\n\n".join(blocks) + ("\n" if blocks else "")
