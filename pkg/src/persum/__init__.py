"""Perspective-aware healthcare answer summarization pipeline and evaluation toolkit."""

__version__ = "0.1.0"

from persum.corpus import GoldSpan, Perspective, SplitSpec, Thread, load_corpus, split_corpus

__all__ = [
    "Perspective",
    "Thread",
    "GoldSpan",
    "SplitSpec",
    "load_corpus",
    "split_corpus",
]
