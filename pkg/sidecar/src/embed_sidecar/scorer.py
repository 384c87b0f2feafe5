"""Embedding-based summary scoring in the core's external-scorer file schema.

Each (source, reference, hypothesis) pair receives bertscore, alignscore, and
summac values computed from the configured embedding model: greedy token-level
cosine F1, source/hypothesis cosine agreement, and per-sentence entailment-style
max-cosine aggregation respectively. With the neural sentence-transformer these
follow the shapes of the original scorers; with the hash model they are
structural stand-ins that still exercise the full contract.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from embed_sidecar.encoder import EmbeddingModel, encode_texts

SUPPORTED_METRICS = ("bertscore", "alignscore", "summac")

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)
_SENTENCE = re.compile(r"[^.!?]+[.!?]?")


class ScorerError(ValueError):
    pass


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE.findall(text) if s.strip()]


def _unit_rows(model: EmbeddingModel, pieces: list[str]) -> np.ndarray:
    return encode_texts(model, pieces, normalize=True)


def _bertscore(model: EmbeddingModel, reference: str, hypothesis: str) -> float:
    ref_tokens = _tokens(reference)
    hyp_tokens = _tokens(hypothesis)
    if not ref_tokens and not hyp_tokens:
        return 1.0
    if not ref_tokens or not hyp_tokens:
        return 0.0
    ref_vectors = _unit_rows(model, ref_tokens)
    hyp_vectors = _unit_rows(model, hyp_tokens)
    similarity = hyp_vectors @ ref_vectors.T
    precision = float(similarity.max(axis=1).mean())
    recall = float(similarity.max(axis=0).mean())
    if precision + recall <= 0:
        return 0.0
    return max(0.0, min(1.0, 2 * precision * recall / (precision + recall)))


def _cosine01(a: np.ndarray, b: np.ndarray) -> float:
    return max(0.0, min(1.0, (float(a @ b) + 1.0) / 2.0))


def _alignscore(model: EmbeddingModel, source: str, hypothesis: str) -> float:
    if not source.strip() or not hypothesis.strip():
        return 0.0
    vectors = _unit_rows(model, [source, hypothesis])
    return _cosine01(vectors[0], vectors[1])


def _summac(model: EmbeddingModel, source: str, hypothesis: str) -> float:
    source_sentences = _sentences(source)
    hyp_sentences = _sentences(hypothesis)
    if not source_sentences or not hyp_sentences:
        return 0.0
    source_vectors = _unit_rows(model, source_sentences)
    hyp_vectors = _unit_rows(model, hyp_sentences)
    similarity = hyp_vectors @ source_vectors.T
    per_sentence = (similarity.max(axis=1) + 1.0) / 2.0
    return float(np.clip(per_sentence, 0.0, 1.0).mean())


def score_pairs(
    pairs: Sequence[tuple[str, str, str]],
    model: EmbeddingModel,
    metrics: Sequence[str] = SUPPORTED_METRICS,
) -> tuple[list[dict], dict[str, float]]:
    """Score (source, reference, hypothesis) pairs.

    Returns (per-pair records, per-metric means). Records always carry all
    three schema keys so the output validates against the core's contract;
    metrics outside the requested subset are computed the same way.
    """
    unknown = [m for m in metrics if m not in SUPPORTED_METRICS]
    if unknown:
        raise ScorerError(f"unsupported metrics: {unknown}; supported: {list(SUPPORTED_METRICS)}")
    if not metrics:
        raise ScorerError("at least one metric must be requested")
    records = []
    for source, reference, hypothesis in pairs:
        records.append(
            {
                "bertscore": _bertscore(model, reference, hypothesis),
                "alignscore": _alignscore(model, source, hypothesis),
                "summac": _summac(model, source, hypothesis),
            }
        )
    means = {
        metric: (sum(r[metric] for r in records) / len(records) if records else 0.0)
        for metric in SUPPORTED_METRICS
    }
    return records, means


def read_pairs(path: str | Path) -> list[tuple[str, str, str]]:
    """Read the {source, reference, hypothesis} JSON-Lines pairs file."""
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                pairs.append((data["source"], data["reference"], data["hypothesis"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ScorerError(f"line {line_number}: malformed pair: {exc}") from None
    return pairs


def write_scores(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
