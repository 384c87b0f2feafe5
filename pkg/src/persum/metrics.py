"""Task A / Task B metric suite and report assembly.

Task A: answer-level classification F1 (macro/weighted), strict and
proportional span matching, and a gold-vs-predicted confusion matrix.
Task B: ROUGE-1/2/L, BLEU-4, METEOR implemented from scratch, with neural
scorer values (BERTScore, AlignScore, SummaC) supplied through a pluggable
external-scorer contract. Each task's overall score is the arithmetic mean of
its eight sub-metrics.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from persum.corpus import PERSPECTIVE_ORDER, GoldSpan, Perspective, Thread
from persum.parsing import LabeledSpan, PredictionRecord

TASK_A_METRICS = ("M-F1", "W-F1", "St-P", "St-R", "St-F1", "Pr-P", "Pr-R", "Pr-F1")
TASK_B_METRICS = ("R-1", "R-2", "R-L", "BLEU", "MET", "BS", "AS", "SC")
EXTERNAL_METRICS = ("bertscore", "alignscore", "summac")


class EvaluationError(ValueError):
    """Raised for inconsistent evaluation inputs."""


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PRF":
        if precision + recall == 0.0:
            return cls(precision, recall, 0.0)
        return cls(precision, recall, 2 * precision * recall / (precision + recall))


# ---------------------------------------------------------------------------
# Classification (answer-level multi-label presence)
# ---------------------------------------------------------------------------

def classification_scores(
    gold: Mapping[object, set], pred: Mapping[object, set]
) -> tuple[float, float]:
    """Per-perspective binary F1 over answer-level presence.

    Macro averages all five classes; a class with zero gold and zero predicted
    positives contributes F1 = 1. Weighted averages by gold positive counts.
    """
    if set(gold) != set(pred):
        missing = set(gold) ^ set(pred)
        raise EvaluationError(f"gold/pred universe mismatch on {sorted(map(str, missing))[:5]}")
    f1s: dict[Perspective, float] = {}
    support: dict[Perspective, int] = {}
    for p in PERSPECTIVE_ORDER:
        tp = fp = fn = 0
        for key in gold:
            has_gold = p in gold[key]
            has_pred = p in pred[key]
            tp += has_gold and has_pred
            fp += has_pred and not has_gold
            fn += has_gold and not has_pred
        support[p] = tp + fn
        if tp + fp + fn == 0:
            f1s[p] = 1.0
        elif tp == 0:
            f1s[p] = 0.0
        else:
            precision = tp / (tp + fp)
            recall = tp / (tp + fn)
            f1s[p] = 2 * precision * recall / (precision + recall)
    macro = sum(f1s.values()) / len(f1s)
    total = sum(support.values())
    if total == 0:
        weighted = macro
    else:
        weighted = sum(f1s[p] * support[p] for p in f1s) / total
    return macro, weighted


# ---------------------------------------------------------------------------
# Span matching
# ---------------------------------------------------------------------------

def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class _Span:
    unit: object  # identifies (thread, answer)
    label: Perspective
    start: int | None
    end: int | None
    norm_text: str

    @property
    def grounded(self) -> bool:
        return self.start is not None and self.end is not None and self.unit is not None


def _from_gold(span: GoldSpan, thread_id: object = None) -> _Span:
    return _Span(
        unit=(thread_id, span.answer_index),
        label=span.label,
        start=span.start,
        end=span.end,
        norm_text=_normalize_text(span.text),
    )


def _from_pred(span: LabeledSpan, thread_id: object = None) -> _Span:
    unit = (thread_id, span.answer_index) if span.answer_index is not None else None
    return _Span(
        unit=unit,
        label=span.label,
        start=span.start,
        end=span.end,
        norm_text=_normalize_text(span.text),
    )


def _strict_matches(pred: _Span, gold: _Span) -> bool:
    if pred.label is not gold.label:
        return False
    if pred.grounded:
        return pred.unit == gold.unit and pred.start == gold.start and pred.end == gold.end
    return pred.norm_text == gold.norm_text


def _strict_tp(gold: Sequence[_Span], pred: Sequence[_Span]) -> int:
    # One-to-one consumption in document order.
    consumed = [False] * len(gold)
    tp = 0
    for p in pred:
        for i, g in enumerate(gold):
            if not consumed[i] and _strict_matches(p, g):
                consumed[i] = True
                tp += 1
                break
    return tp


def _overlap_chars(start: int, end: int, intervals: Iterable[tuple[int, int]]) -> int:
    # Length of [start, end) covered by the union of the intervals.
    merged: list[list[int]] = []
    for s, e in sorted((max(s, start), min(e, end)) for s, e in intervals):
        if s >= e:
            continue
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return sum(e - s for s, e in merged)


def _proportional_vectors(
    gold: Sequence[_Span], pred: Sequence[_Span]
) -> tuple[list[float], list[float]]:
    credits = []
    for p in pred:
        same = [(g.start, g.end) for g in gold if g.label is p.label and g.unit == p.unit]
        length = p.end - p.start
        credits.append(_overlap_chars(p.start, p.end, same) / length if length else 0.0)
    coverages = []
    for g in gold:
        same = [(p.start, p.end) for p in pred if p.label is g.label and p.unit == g.unit]
        length = g.end - g.start
        coverages.append(_overlap_chars(g.start, g.end, same) / length if length else 0.0)
    return credits, coverages


def _prf_from_internal(
    gold: Sequence[_Span], pred: Sequence[_Span], mode: str
) -> PRF:
    if not gold and not pred:
        return PRF(1.0, 1.0, 1.0)
    if mode == "strict":
        tp = _strict_tp(gold, pred)
        precision = tp / len(pred) if pred else 0.0
        recall = tp / len(gold) if gold else 0.0
        return PRF.from_pr(precision, recall)
    ungrounded = [p for p in pred if not p.grounded]
    if ungrounded:
        raise EvaluationError(
            f"proportional matching requires grounded spans; ungrounded: "
            f"{[p.norm_text[:30] for p in ungrounded]}"
        )
    credits, coverages = _proportional_vectors(gold, pred)
    precision = sum(credits) / len(credits) if credits else 0.0
    recall = sum(coverages) / len(coverages) if coverages else 0.0
    return PRF.from_pr(precision, recall)


def span_match(
    gold: Sequence[GoldSpan],
    pred: Sequence[LabeledSpan],
    mode: Literal["strict", "proportional"],
) -> PRF:
    """Strict (exact label+offset, one-to-one) or proportional (character
    overlap) precision/recall/F1 for one thread."""
    return _prf_from_internal(
        [_from_gold(g) for g in gold], [_from_pred(p) for p in pred], mode
    )


def confusion_matrix(
    gold: Sequence[GoldSpan], pred: Sequence[LabeledSpan]
) -> tuple[np.ndarray, int]:
    """Pair each gold span with the same-answer prediction of maximal character
    overlap (at least one char); returns (5x5 matrix in canonical label order,
    count of unpaired gold spans)."""
    index = {p: i for i, p in enumerate(PERSPECTIVE_ORDER)}
    matrix = np.zeros((5, 5), dtype=int)
    misses = 0
    for g in gold:
        best_overlap = 0
        best_label = None
        for p in pred:
            if not p.grounded or p.answer_index != g.answer_index:
                continue
            overlap = max(0, min(g.end, p.end) - max(g.start, p.start))
            if overlap > best_overlap:
                best_overlap = overlap
                best_label = p.label
        if best_label is None:
            misses += 1
        else:
            matrix[index[g.label], index[best_label]] += 1
    return matrix, misses


# ---------------------------------------------------------------------------
# Lexical metrics
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge(ref: str, hyp: str, variant: Literal[1, 2, "L"]) -> float:
    """ROUGE-N F1 with clipped counts, or LCS-based ROUGE-L."""
    r = tokenize(ref)
    h = tokenize(hyp)
    if not r and not h:
        return 1.0
    if not r or not h:
        return 0.0
    if variant == "L":
        lcs = _lcs_length(r, h)
        if lcs == 0:
            return 0.0
        return PRF.from_pr(lcs / len(h), lcs / len(r)).f1
    n = int(variant)
    rn = Counter(_ngrams(r, n))
    hn = Counter(_ngrams(h, n))
    if not rn or not hn:
        return 0.0
    overlap = sum(min(count, rn[gram]) for gram, count in hn.items())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(hn.values())
    recall = overlap / sum(rn.values())
    return PRF.from_pr(precision, recall).f1


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[-1]))
        previous = current
    return previous[-1]


def bleu(ref: str, hyp: str) -> float:
    """Sentence BLEU-4: geometric mean of modified n-gram precisions with
    add-one smoothing on zero counts, plus brevity penalty."""
    r = tokenize(ref)
    h = tokenize(hyp)
    if not r and not h:
        return 1.0
    if not r or not h:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        hn = Counter(_ngrams(h, n))
        total = sum(hn.values())
        if total == 0:
            precision = 1.0  # nothing at this order to get wrong
        else:
            rn = Counter(_ngrams(r, n))
            clipped = sum(min(count, rn[gram]) for gram, count in hn.items())
            precision = clipped / total if clipped else (clipped + 1) / (total + 1)
        log_sum += math.log(precision)
    geo = math.exp(log_sum / 4)
    bp = 1.0 if len(h) >= len(r) else math.exp(1 - len(r) / len(h))
    return bp * geo


def meteor(ref: str, hyp: str, alpha: float = 0.9, beta: float = 3.0, gamma: float = 0.5) -> float:
    """Unigram-alignment score with exact then Porter-stem matching and a
    chunk-based fragmentation penalty."""
    r = tokenize(ref)
    h = tokenize(hyp)
    if not r and not h:
        return 1.0
    if not r or not h:
        return 0.0
    alignment: list[tuple[int, int]] = []
    used_ref: set[int] = set()
    for i, token in enumerate(h):
        for j, ref_token in enumerate(r):
            if j not in used_ref and ref_token == token:
                alignment.append((i, j))
                used_ref.add(j)
                break
    matched_h = {i for i, _ in alignment}
    r_stems = [porter_stem(t) for t in r]
    for i, token in enumerate(h):
        if i in matched_h:
            continue
        stem = porter_stem(token)
        for j, ref_stem in enumerate(r_stems):
            if j not in used_ref and ref_stem == stem:
                alignment.append((i, j))
                used_ref.add(j)
                break
    m = len(alignment)
    if m == 0:
        return 0.0
    precision = m / len(h)
    recall = m / len(r)
    f_mean = precision * recall / (alpha * precision + (1 - alpha) * recall)
    alignment.sort()
    chunks = 1
    for (i1, j1), (i2, j2) in zip(alignment, alignment[1:]):
        if not (i2 == i1 + 1 and j2 == j1 + 1):
            chunks += 1
    penalty = gamma * (chunks / m) ** beta
    return f_mean * (1 - penalty)


# Classic Porter stemming algorithm (1980), sufficient for METEOR stem matches.
_VOWELS = "aeiou"


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    count = 0
    previous = None
    for i in range(len(stem)):
        current = "c" if _is_consonant(stem, i) else "v"
        if previous == "v" and current == "c":
            count += 1
        previous = current
    return count


def _contains_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    if not (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
    ):
        return False
    return word[-1] not in "wxy"


def porter_stem(word: str) -> str:
    if len(word) <= 2:
        return word
    word = word.lower()

    # Step 1a
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif word.endswith("ss"):
        pass
    elif word.endswith("s"):
        word = word[:-1]

    # Step 1b
    flag_1b = False
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    elif word.endswith("ed"):
        if _contains_vowel(word[:-2]):
            word = word[:-2]
            flag_1b = True
    elif word.endswith("ing"):
        if _contains_vowel(word[:-3]):
            word = word[:-3]
            flag_1b = True
    if flag_1b:
        if word.endswith(("at", "bl", "iz")):
            word += "e"
        elif _ends_double_consonant(word) and word[-1] not in "lsz":
            word = word[:-1]
        elif _measure(word) == 1 and _cvc(word):
            word += "e"

    # Step 1c
    if word.endswith("y") and _contains_vowel(word[:-1]):
        word = word[:-1] + "i"

    # Step 2
    step2 = [
        ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
        ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
        ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
        ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
        ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ]
    for suffix, replacement in step2:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if _measure(stem) > 0:
                word = stem + replacement
            break

    # Step 3
    step3 = [
        ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
        ("ical", "ic"), ("ful", ""), ("ness", ""),
    ]
    for suffix, replacement in step3:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if _measure(stem) > 0:
                word = stem + replacement
            break

    # Step 4
    step4 = [
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
        "ment", "ent", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ]
    for suffix in step4:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if _measure(stem) > 1:
                word = stem
            break
    else:
        if word.endswith("ion") and len(word) > 3 and word[-4] in "st":
            stem = word[:-3]
            if _measure(stem) > 1:
                word = stem

    # Step 5a
    if word.endswith("e"):
        stem = word[:-1]
        if _measure(stem) > 1 or (_measure(stem) == 1 and not _cvc(stem)):
            word = stem
    # Step 5b
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        word = word[:-1]
    return word


# ---------------------------------------------------------------------------
# Overall means
# ---------------------------------------------------------------------------

def _overall(values: Mapping[str, float], keys: Sequence[str]) -> float:
    for key in keys:
        if key not in values or values[key] is None:
            raise EvaluationError(f"missing sub-metric {key!r}")
        value = values[key]
        if not (0.0 <= value <= 1.0) or value != value:
            raise EvaluationError(f"sub-metric {key!r} out of [0, 1]: {value}")
    return sum(values[key] for key in keys) / len(keys)


def task_a_overall(values: Mapping[str, float]) -> float:
    """Arithmetic mean of the eight Task A sub-metrics."""
    return _overall(values, TASK_A_METRICS)


def task_b_overall(values: Mapping[str, float]) -> float:
    """Arithmetic mean of the eight Task B sub-metrics."""
    return _overall(values, TASK_B_METRICS)


# ---------------------------------------------------------------------------
# External scorer contract
# ---------------------------------------------------------------------------

def external_scores(
    pairs: Sequence[tuple[str, str, str]],
    scorer: str | Path | None,
) -> dict[str, float]:
    """Fetch bertscore/alignscore/summac means from a file or HTTP scorer.

    The file contract is JSON-Lines with one record per (source, reference,
    hypothesis) pair carrying all three metric keys. Returns {} when no scorer
    is configured, leaving the Task B report partial.
    """
    if scorer is None:
        return {}
    scorer_str = str(scorer)
    if scorer_str.startswith(("http://", "https://")):
        import httpx

        response = httpx.post(
            scorer_str,
            json={"pairs": [
                {"source": s, "reference": r, "hypothesis": h} for s, r, h in pairs
            ]},
            timeout=300.0,
        )
        response.raise_for_status()
        records = response.json()["scores"]
    else:
        records = []
        with open(scorer_str, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
    if len(records) != len(pairs):
        raise EvaluationError(
            f"scorer returned {len(records)} records for {len(pairs)} pairs"
        )
    means: dict[str, float] = {}
    for metric in EXTERNAL_METRICS:
        values = []
        for i, record in enumerate(records):
            if metric not in record:
                raise EvaluationError(f"scorer record {i} missing {metric!r}")
            values.append(float(record[metric]))
        means[metric] = sum(values) / len(values) if values else 0.0
    return means


# ---------------------------------------------------------------------------
# Corpus-level reports
# ---------------------------------------------------------------------------

@dataclass
class TaskAReport:
    macro_f1: float
    weighted_f1: float
    strict: PRF
    proportional: PRF
    overall: float
    confusion: list[list[int]]
    confusion_misses: int
    per_instance: list[dict] = field(default_factory=list)

    def metric_values(self) -> dict[str, float]:
        return {
            "M-F1": self.macro_f1,
            "W-F1": self.weighted_f1,
            "St-P": self.strict.precision,
            "St-R": self.strict.recall,
            "St-F1": self.strict.f1,
            "Pr-P": self.proportional.precision,
            "Pr-R": self.proportional.recall,
            "Pr-F1": self.proportional.f1,
        }

    def to_json(self) -> dict:
        return {
            "task": "A",
            "metrics": self.metric_values(),
            "overall": self.overall,
            "confusion": self.confusion,
            "confusion_labels": [p.value for p in PERSPECTIVE_ORDER],
            "confusion_misses": self.confusion_misses,
            "per_instance": self.per_instance,
        }


@dataclass
class TaskBReport:
    rouge1: float
    rouge2: float
    rougeL: float
    bleu: float
    meteor: float
    bertscore: float | None = None
    alignscore: float | None = None
    summac: float | None = None
    overall: float | None = None
    per_instance: list[dict] = field(default_factory=list)

    def metric_values(self) -> dict[str, float | None]:
        return {
            "R-1": self.rouge1,
            "R-2": self.rouge2,
            "R-L": self.rougeL,
            "BLEU": self.bleu,
            "MET": self.meteor,
            "BS": self.bertscore,
            "AS": self.alignscore,
            "SC": self.summac,
        }

    @property
    def status(self) -> str:
        present = sum(1 for v in self.metric_values().values() if v is not None)
        return "complete" if present == 8 else f"partial ({present}/8)"

    def to_json(self) -> dict:
        return {
            "task": "B",
            "metrics": self.metric_values(),
            "overall": self.overall,
            "status": self.status,
            "per_instance": self.per_instance,
        }


def _presence_maps(
    threads: Sequence[Thread], by_id: Mapping[str, PredictionRecord]
) -> tuple[dict, dict]:
    gold_presence: dict = {}
    pred_presence: dict = {}
    for thread in threads:
        record = by_id.get(thread.id)
        for answer_index in range(len(thread.answers)):
            key = (thread.id, answer_index)
            gold_presence[key] = {
                s.label for s in thread.gold_spans if s.answer_index == answer_index
            }
            pred_presence[key] = set()
            if record is not None:
                pred_presence[key] = {
                    s.label
                    for s in record.spans
                    if s.grounded and s.answer_index == answer_index
                }
    return gold_presence, pred_presence


def evaluate_task_a(
    threads: Sequence[Thread], predictions: Sequence[PredictionRecord]
) -> TaskAReport:
    """Corpus-level Task A report, micro-pooled over all spans.

    Ungrounded predictions participate in strict matching via normalized-text
    fallback; they are excluded from classification presence and proportional
    overlap, which require answer offsets.
    """
    by_id = {r.thread_id: r for r in predictions if r.task == "A"}
    orphans = sorted(set(by_id) - {t.id for t in threads})
    if orphans:
        raise EvaluationError(f"predictions reference unknown thread ids: {orphans}")

    gold_presence, pred_presence = _presence_maps(threads, by_id)
    macro, weighted = classification_scores(gold_presence, pred_presence)

    all_gold: list[_Span] = []
    strict_pred: list[_Span] = []
    grounded_pred: list[_Span] = []
    all_gold_raw: list[GoldSpan] = []
    all_pred_raw: list[LabeledSpan] = []
    per_instance = []
    confusion = np.zeros((5, 5), dtype=int)
    misses = 0
    for thread in threads:
        record = by_id.get(thread.id)
        pred_spans = record.spans if record is not None else []
        gold_internal = [_from_gold(g, thread.id) for g in thread.gold_spans]
        pred_internal = [_from_pred(p, thread.id) for p in pred_spans]
        all_gold.extend(gold_internal)
        strict_pred.extend(pred_internal)
        grounded_pred.extend(p for p in pred_internal if p.grounded)
        all_gold_raw.extend(thread.gold_spans)
        all_pred_raw.extend(pred_spans)
        matrix, missed = confusion_matrix(thread.gold_spans, pred_spans)
        confusion += matrix
        misses += missed
        per_instance.append(
            {
                "thread_id": thread.id,
                "gold_spans": len(thread.gold_spans),
                "pred_spans": len(pred_spans),
                "strict_f1": _prf_from_internal(gold_internal, pred_internal, "strict").f1,
            }
        )

    strict = _prf_from_internal(all_gold, strict_pred, "strict")
    proportional = _prf_from_internal(all_gold, grounded_pred, "proportional")
    values = {
        "M-F1": macro,
        "W-F1": weighted,
        "St-P": strict.precision,
        "St-R": strict.recall,
        "St-F1": strict.f1,
        "Pr-P": proportional.precision,
        "Pr-R": proportional.recall,
        "Pr-F1": proportional.f1,
    }
    return TaskAReport(
        macro_f1=macro,
        weighted_f1=weighted,
        strict=strict,
        proportional=proportional,
        overall=task_a_overall(values),
        confusion=confusion.tolist(),
        confusion_misses=misses,
        per_instance=per_instance,
    )


def evaluate_task_b(
    threads: Sequence[Thread],
    predictions: Sequence[PredictionRecord],
    external: Mapping[str, float] | None = None,
) -> TaskBReport:
    """Corpus-level Task B report, macro-averaged over threads.

    Per thread, each perspective present in gold or prediction contributes one
    (reference, hypothesis) pair, with the missing side as the empty string;
    perspectives absent from both sides are skipped.
    """
    by_id = {r.thread_id: r for r in predictions if r.task == "B"}
    orphans = sorted(set(by_id) - {t.id for t in threads})
    if orphans:
        raise EvaluationError(f"predictions reference unknown thread ids: {orphans}")

    lexical = {"R-1": [], "R-2": [], "R-L": [], "BLEU": [], "MET": []}
    per_instance = []
    for thread in threads:
        record = by_id.get(thread.id)
        pred_summaries = record.summaries if record is not None else {}
        labels = [
            p
            for p in PERSPECTIVE_ORDER
            if p in thread.gold_summaries or p in pred_summaries
        ]
        if not labels:
            continue
        scores = {key: [] for key in lexical}
        for label in labels:
            ref = thread.gold_summaries.get(label, "")
            hyp = pred_summaries.get(label, "")
            scores["R-1"].append(rouge(ref, hyp, 1))
            scores["R-2"].append(rouge(ref, hyp, 2))
            scores["R-L"].append(rouge(ref, hyp, "L"))
            scores["BLEU"].append(bleu(ref, hyp))
            scores["MET"].append(meteor(ref, hyp))
        row = {"thread_id": thread.id, "pairs": len(labels)}
        for key, values in scores.items():
            mean = sum(values) / len(values)
            lexical[key].append(mean)
            row[key] = mean
        per_instance.append(row)

    def corpus_mean(values: list[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    external = dict(external or {})
    report = TaskBReport(
        rouge1=corpus_mean(lexical["R-1"]),
        rouge2=corpus_mean(lexical["R-2"]),
        rougeL=corpus_mean(lexical["R-L"]),
        bleu=corpus_mean(lexical["BLEU"]),
        meteor=corpus_mean(lexical["MET"]),
        bertscore=external.get("bertscore"),
        alignscore=external.get("alignscore"),
        summac=external.get("summac"),
        per_instance=per_instance,
    )
    values = report.metric_values()
    if all(v is not None for v in values.values()):
        report.overall = task_b_overall(values)  # type: ignore[arg-type]
    return report


# ---------------------------------------------------------------------------
# Text tables (layout mirrors the report headers used throughout)
# ---------------------------------------------------------------------------

def render_table(
    rows: Sequence[tuple[str, str, Mapping[str, float | None], float | None]],
    metrics: Sequence[str],
) -> str:
    header = ["Model", "Setting", *metrics, "Overall"]
    lines = ["\t".join(header)]
    for model, setting, values, overall in rows:
        cells = [model, setting]
        for key in metrics:
            value = values.get(key)
            cells.append("-" if value is None else f"{value:.4f}")
        cells.append("-" if overall is None else f"{overall:.4f}")
        lines.append("\t".join(cells))
    return "\n".join(lines)


def render_task_a_table(rows) -> str:
    return render_table(rows, TASK_A_METRICS)


def render_task_b_table(rows) -> str:
    return render_table(rows, TASK_B_METRICS)
