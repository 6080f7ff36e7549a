"""Max-cosine-similarity scoring against a sampled positive reference set.

The reference set is K embeddings sampled without replacement from the
positive class and L2-normalized. A document scores the maximum cosine
similarity between its embedding and any reference vector. Zero-norm
document vectors cannot be compared and sink to the bottom with score -1.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .embeddings import EmbeddingMatrix, read_embeddings, write_embeddings
from .errors import DataError
from .scores import ScoreTable

log = logging.getLogger(__name__)

DEFAULT_K = 8192


@dataclass
class ReferenceSet:
    """Unit-norm reference vectors with their source ids."""

    vectors: np.ndarray  # (k, dim) float32, rows unit-norm
    ids: List[str]
    seed: int
    requested_k: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def save(self, path, config_hash: str = "") -> None:
        meta = {
            "kind": "cosine_reference_set",
            "requested_k": str(self.requested_k),
            "seed": str(self.seed),
            "normalized": "true",
            "config_hash": config_hash,
        }
        write_embeddings(zip(self.ids, self.vectors), self.dim, path, meta=meta)

    @classmethod
    def load(cls, path) -> "ReferenceSet":
        matrix = read_embeddings(path)
        if matrix.meta.get("kind") != "cosine_reference_set":
            raise DataError(f"{path}: not a reference-set file")
        return cls(
            vectors=matrix.vectors,
            ids=list(matrix.ids),
            seed=int(matrix.meta.get("seed", "0")),
            requested_k=int(matrix.meta.get("requested_k", str(len(matrix)))),
        )


def build_reference_set(
    positives: EmbeddingMatrix,
    k: int = DEFAULT_K,
    seed: int = 0,
) -> ReferenceSet:
    """Sample min(k, usable) positive embeddings and normalize them.

    Zero-norm vectors are skipped with a warning; an all-zero positive set
    is an error.
    """
    if len(positives) == 0:
        raise DataError("positive embedding matrix is empty")
    if k < 1:
        raise DataError(f"reference-set size must be >= 1, got {k}")
    norms = np.linalg.norm(positives.vectors.astype(np.float64), axis=1)
    usable = np.flatnonzero(norms > 0.0)
    skipped = len(positives) - len(usable)
    if len(usable) == 0:
        raise DataError("every positive embedding has zero norm")
    if skipped:
        log.warning("skipped %d zero-norm positive embeddings", skipped)

    rng = random.Random(seed)
    take = min(k, len(usable))
    picked = sorted(rng.sample(range(len(usable)), take))
    rows = usable[picked]
    vecs = positives.vectors[rows].astype(np.float64)
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return ReferenceSet(
        vectors=vecs.astype(np.float32),
        ids=[positives.ids[int(r)] for r in rows],
        seed=seed,
        requested_k=k,
    )


def score_cosine(
    refs: ReferenceSet,
    matrix: EmbeddingMatrix,
    config_hash: str = "",
    block_size: int = 4096,
) -> ScoreTable:
    """Maximum cosine similarity of each document against the reference set.

    Documents are normalized and multiplied against the reference matrix in
    blocks; accumulation is float64. Zero-norm documents score -1.
    """
    if matrix.dim != refs.dim:
        raise DataError(f"document dim {matrix.dim} does not match reference dim {refs.dim}")
    ref_t = refs.vectors.astype(np.float64).T  # (dim, k)
    n = len(matrix)
    scores = np.empty(n, dtype=np.float64)
    zero_norm = 0
    for start in range(0, n, block_size):
        stop = min(start + block_size, n)
        block = matrix.vectors[start:stop].astype(np.float64)
        norms = np.linalg.norm(block, axis=1)
        ok = norms > 0.0
        safe = np.where(ok, norms, 1.0)
        sims = (block / safe[:, None]) @ ref_t
        best = sims.max(axis=1)
        best[~ok] = -1.0
        zero_norm += int(np.count_nonzero(~ok))
        scores[start:stop] = best
    meta: Dict[str, str] = {}
    if zero_norm:
        log.warning("%d zero-norm document vectors scored -1", zero_norm)
        meta["zero_norm_docs"] = str(zero_norm)
    return ScoreTable(ids=list(matrix.ids), scores=scores, scorer="cosine",
                      config_hash=config_hash, meta=meta)
