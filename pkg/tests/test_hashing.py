import numpy as np
from hypothesis import given, strategies as st

from corpusfilter.hashing import (
    NGRAM_SEP,
    fnv1a_64,
    fnv1a_64_batch,
    ngram_fingerprint,
    window_fingerprints,
)

# Published FNV-1a 64-bit test vectors.
KNOWN = [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
]


def test_known_vectors():
    for data, expected in KNOWN:
        assert fnv1a_64(data) == expected


def test_ngram_fingerprint_uses_separator():
    assert ngram_fingerprint(["ab", "c"]) != ngram_fingerprint(["a", "bc"])
    assert ngram_fingerprint(["hello", "world"]) == fnv1a_64(
        f"hello{NGRAM_SEP}world".encode("utf-8")
    )


@given(st.lists(st.binary(min_size=0, max_size=40), max_size=50))
def test_batch_matches_scalar(items):
    batch = fnv1a_64_batch(items)
    assert batch.dtype == np.uint64
    assert [int(h) for h in batch] == [fnv1a_64(b) for b in items]


@given(st.lists(st.text(min_size=1, max_size=8), min_size=0, max_size=30),
       st.integers(min_value=2, max_value=5))
def test_window_fingerprints_match_scalar(tokens, n):
    fps = window_fingerprints(tokens, n)
    expected = [ngram_fingerprint(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
    assert [int(h) for h in fps] == expected


def test_window_count():
    tokens = [f"t{i}" for i in range(13)]
    assert len(window_fingerprints(tokens, 13)) == 1
    assert len(window_fingerprints(tokens + ["x"], 13)) == 2
    assert len(window_fingerprints(tokens[:5], 13)) == 0
