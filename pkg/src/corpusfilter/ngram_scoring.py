"""Bulk scoring of document batches with an n-gram model.

The reference scorer is NgramModel.score; this module reproduces it over
whole batches. Texts that tokenize on plain ASCII whitespace go through a
byte-level tokenizer and a jitted kernel that hashes features and
accumulates the collapsed per-feature weights in one pass; everything else
(character mode, non-ASCII whitespace) falls back to the reference path.
Both paths add the same float64 weights in the same order, so they agree
to the last bit on the accumulated sums.
"""

from __future__ import annotations

import logging
import math
import re
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus_io import Document
from .hashing import FNV64_OFFSET, FNV64_PRIME, NGRAM_SEP_BYTES, fnv1a_64
from .scores import ScoreTable

if TYPE_CHECKING:
    from .ngram_classifier import NgramModel

log = logging.getLogger(__name__)

try:
    from numba import njit, types
    from numba.typed import Dict as NumbaDict

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

# Whitespace the byte-level tokenizer understands; texts containing any
# other whitespace codepoint take the reference path.
_EXOTIC_WS_RE = re.compile(
    "[\x85\xa0  -     　]"
)

assert len(NGRAM_SEP_BYTES) == 3
_SEP0, _SEP1, _SEP2 = NGRAM_SEP_BYTES

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _score_kernel(data, starts, ends, doc_bounds, fp_to_idx, w, nvocab,
                      order, bucket, out_sum, out_cnt):
        offset = np.uint64(FNV64_OFFSET)
        prime = np.uint64(FNV64_PRIME)
        ubucket = np.uint64(bucket)
        ndocs = len(doc_bounds) - 1
        for d in range(ndocs):
            t0 = doc_bounds[d]
            t1 = doc_bounds[d + 1]
            ntok = t1 - t0
            total = 0.0
            count = 0
            for i in range(ntok):
                h = offset
                for p in range(starts[t0 + i], ends[t0 + i]):
                    h = (h ^ np.uint64(data[p])) * prime
                if h in fp_to_idx:
                    total += w[fp_to_idx[h]]
                    count += 1
            for n in range(2, order + 1):
                for i in range(ntok - n + 1):
                    h = offset
                    for j in range(n):
                        if j > 0:
                            h = (h ^ np.uint64(_SEP0)) * prime
                            h = (h ^ np.uint64(_SEP1)) * prime
                            h = (h ^ np.uint64(_SEP2)) * prime
                        for p in range(starts[t0 + i + j], ends[t0 + i + j]):
                            h = (h ^ np.uint64(data[p])) * prime
                    total += w[nvocab + np.int64(h % ubucket)]
                    count += 1
            out_sum[d] = total
            out_cnt[d] = count


def _tokenize_batch(texts: Sequence[str]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Byte buffer, token spans, and per-document token bounds for a batch.

    Only valid for texts whose whitespace is plain ASCII.
    """
    blob = " ".join(texts).encode("utf-8")
    data = np.frombuffer(blob, dtype=np.uint8)
    byte_lens = np.fromiter((len(t.encode("utf-8")) for t in texts),
                            dtype=np.int64, count=len(texts))
    text_starts = np.zeros(len(texts), dtype=np.int64)
    np.cumsum(byte_lens[:-1] + 1, out=text_starts[1:])

    if len(data) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return data, empty, empty, np.zeros(len(texts) + 1, dtype=np.int64)

    nonws = ~((data == 0x20) | ((data >= 0x09) & (data <= 0x0D)))
    edges = np.diff(nonws.astype(np.int8))
    starts = np.flatnonzero(edges == 1).astype(np.int64) + 1
    ends = np.flatnonzero(edges == -1).astype(np.int64) + 1
    if nonws[0]:
        starts = np.concatenate((np.zeros(1, dtype=np.int64), starts))
    if nonws[-1]:
        ends = np.concatenate((ends, np.array([len(data)], dtype=np.int64)))

    token_doc = np.searchsorted(text_starts, starts, side="right") - 1
    counts = np.bincount(token_doc, minlength=len(texts))
    doc_bounds = np.zeros(len(texts) + 1, dtype=np.int64)
    np.cumsum(counts, out=doc_bounds[1:])
    return data, starts, ends, doc_bounds


class NgramScorer:
    """Scores batches of texts against one immutable n-gram model."""

    def __init__(self, model: "NgramModel", force_reference: bool = False):
        self.model = model
        self.w = model.score_weights()
        self.nvocab = len(model.vocab)
        self._jit_ready = False
        if not force_reference and HAVE_NUMBA and model.tokenizer.mode == "whitespace":
            self._fp_to_idx = NumbaDict.empty(key_type=types.uint64,
                                              value_type=types.int64)
            collided = False
            for token, idx in model.vocab.items():
                fp = np.uint64(fnv1a_64(token.encode("utf-8")))
                if fp in self._fp_to_idx:
                    collided = True
                    break
                self._fp_to_idx[fp] = idx
            if collided:
                log.warning("vocab fingerprint collision; using reference scorer")
            else:
                self._jit_ready = True

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        """Positive-class probability for each text, in input order."""
        scores = np.empty(len(texts), dtype=np.float64)
        fast_idx: List[int] = []
        if self._jit_ready:
            lowercase = self.model.tokenizer.lowercase
            prepared: List[str] = []
            for i, text in enumerate(texts):
                if _EXOTIC_WS_RE.search(text) is None:
                    fast_idx.append(i)
                    prepared.append(text.lower() if lowercase else text)
                else:
                    scores[i] = self.model.score(text)
            if prepared:
                sums, counts = self._run_kernel(prepared)
                for j, i in enumerate(fast_idx):
                    if counts[j] > 0:
                        scores[i] = _sigmoid64(sums[j] / counts[j])
                    else:
                        scores[i] = 0.5
        else:
            for i, text in enumerate(texts):
                scores[i] = self.model.score(text)
        return scores

    def _run_kernel(self, prepared: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        data, starts, ends, doc_bounds = _tokenize_batch(prepared)
        out_sum = np.zeros(len(prepared), dtype=np.float64)
        out_cnt = np.zeros(len(prepared), dtype=np.int64)
        _score_kernel(data, starts, ends, doc_bounds, self._fp_to_idx, self.w,
                      self.nvocab, self.model.tokenizer.ngram_order,
                      self.model.bucket_count, out_sum, out_cnt)
        return out_sum, out_cnt

    def score_documents(
        self,
        docs: Iterable[Document],
        config_hash: str = "",
        chunk_size: int = 4096,
    ) -> ScoreTable:
        """Score a document stream in chunks into one table."""
        ids: List[str] = []
        parts: List[np.ndarray] = []
        batch_ids: List[str] = []
        batch_texts: List[str] = []
        for doc in docs:
            batch_ids.append(doc.id)
            batch_texts.append(doc.text)
            if len(batch_texts) >= chunk_size:
                parts.append(self.score_texts(batch_texts))
                ids.extend(batch_ids)
                batch_ids, batch_texts = [], []
        if batch_texts:
            parts.append(self.score_texts(batch_texts))
            ids.extend(batch_ids)
        scores = np.concatenate(parts) if parts else np.empty(0, dtype=np.float64)
        return ScoreTable(ids=ids, scores=scores, scorer="ngram",
                          config_hash=config_hash)


def _sigmoid64(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)
