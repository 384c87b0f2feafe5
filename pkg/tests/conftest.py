import pathlib

import pytest

from persum.corpus import load_corpus

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture
def threads():
    return load_corpus(DATA / "fixture_corpus.json")


@pytest.fixture
def thread(threads):
    return threads[0]
