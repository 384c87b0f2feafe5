"""Embedding sidecar: batch sentence encoding, an HTTP embedding endpoint, and
summary scoring, all emitting the JSON-Lines/HTTP contracts the core consumes.
"""

from embed_sidecar.encoder import (
    DEFAULT_MODEL,
    EncoderError,
    HashModel,
    encode_texts,
    get_model,
    read_texts,
    write_embeddings,
)
from embed_sidecar.scorer import ScorerError, score_pairs

__all__ = [
    "DEFAULT_MODEL",
    "EncoderError",
    "HashModel",
    "ScorerError",
    "encode_texts",
    "get_model",
    "read_texts",
    "score_pairs",
    "write_embeddings",
]
