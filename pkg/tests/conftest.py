import random

import numpy as np
import pytest

from corpusfilter.corpus_io import Document


def make_docs(n, lang="dan_Latn", prefix="d", text_fn=None):
    """n documents with deterministic ids and texts."""
    if text_fn is None:
        text_fn = lambda i: f"document number {i} with some text"
    return [Document(id=f"{prefix}{i:06d}", lang=lang, text=text_fn(i)) for i in range(n)]


@pytest.fixture
def rng():
    return random.Random(12345)


@pytest.fixture
def np_rng():
    return np.random.Generator(np.random.PCG64(12345))
