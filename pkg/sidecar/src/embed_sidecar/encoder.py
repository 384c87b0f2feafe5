"""Sentence encoding backends and the JSON-Lines embedding file contract.

Two backends share one interface: the pretrained sentence-transformer model
(all-MiniLM-L6-v2 by default) and a dependency-free hash model that derives a
unit vector from a text digest. The hash model keeps every contract testable
on machines that cannot download the neural model; both emit dim-384 vectors
by default.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_DIM = 384


class EncoderError(ValueError):
    pass


class EmbeddingModel(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashModel:
    """Deterministic offline backend: digest-seeded pseudo-random unit vectors.

    Identical texts map to identical vectors; unrelated texts are nearly
    orthogonal in expectation. Carries no semantic signal.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise EncoderError(f"embedding dim must be positive, got {dim}")
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vector = rng.standard_normal(self.dim)
            rows.append(vector / np.linalg.norm(vector))
        return np.asarray(rows)


class SentenceTransformerModel:
    """Thin wrapper over sentence-transformers; imported lazily."""

    def __init__(self, model_id: str = DEFAULT_MODEL):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderError(
                f"model {model_id!r} requires the sentence-transformers package"
            ) from exc
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as exc:
            raise EncoderError(f"could not load model {model_id!r}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(self._model.encode(list(texts), convert_to_numpy=True))


def get_model(model_id: str = DEFAULT_MODEL) -> EmbeddingModel:
    """Resolve a model id: 'hash' or 'hash:<dim>' for the offline backend,
    anything else is treated as a sentence-transformers model id."""
    if model_id == "hash":
        return HashModel()
    if model_id.startswith("hash:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError:
            raise EncoderError(f"malformed hash model id {model_id!r}") from None
        return HashModel(dim)
    return SentenceTransformerModel(model_id)


def encode_texts(
    model: EmbeddingModel, texts: Sequence[str], normalize: bool = True
) -> np.ndarray:
    """Embed texts in order; rows are L2-normalized unless disabled."""
    for i, text in enumerate(texts):
        if not text.strip():
            raise EncoderError(f"text {i} is empty")
    if not texts:
        return np.zeros((0, model.dim))
    vectors = model.embed(texts)
    if not np.all(np.isfinite(vectors)):
        raise EncoderError("model produced non-finite embedding entries")
    if normalize:
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise EncoderError("model produced a zero vector; cannot normalize")
        vectors = vectors / norms
    return vectors


def read_texts(path: str | Path) -> list[tuple[str, str]]:
    """Read the {id, text} JSON-Lines input; ids must be unique."""
    records: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                identifier = data["id"]
                text = data["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EncoderError(f"line {line_number}: malformed record: {exc}") from None
            if identifier in seen:
                raise EncoderError(f"line {line_number}: duplicate id {identifier!r}")
            seen.add(identifier)
            records.append((str(identifier), str(text)))
    return records


def write_embeddings(
    ids: Sequence[str], vectors: np.ndarray, path: str | Path
) -> None:
    """Write {id, vector} JSON-Lines records, one per input, order preserved."""
    if len(ids) != len(vectors):
        raise EncoderError(f"{len(ids)} ids but {len(vectors)} vectors")
    with open(path, "w", encoding="utf-8") as handle:
        for identifier, vector in zip(ids, vectors):
            record = {"id": identifier, "vector": [float(x) for x in vector]}
            handle.write(json.dumps(record) + "\n")
