"""Document encoding: tokenize, truncate to 512 tokens, mean-pool.

The truncation budget counts subword tokens including the two boundary
specials, leaving 510 text tokens; the rule is recorded in every shard
header so consumers can tell how vectors were produced. Mean pooling
averages the final hidden layer over non-padding positions only, so
right-padding a batch never changes a document's vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .corpus import iter_documents
from .embx import write_embx

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_MODEL = "xlm-roberta-base"
TRUNCATION_RULE = "first-512-subword-tokens-including-specials"


@dataclass
class EncoderConfig:
    model_name: str = DEFAULT_MODEL
    max_tokens: int = 512
    batch_size: int = 32
    deterministic: bool = True
    device: str = "cpu"


@dataclass
class ItemError:
    doc_id: str
    reason: str


@dataclass
class CorpusSummary:
    shards: List[dict] = field(default_factory=list)
    embedded: int = 0
    errors: List[ItemError] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "shards": self.shards,
            "embedded": self.embedded,
            "errors": [{"id": e.doc_id, "reason": e.reason} for e in self.errors],
        }


class DocumentEncoder:
    """Pretrained masked-LM encoder wrapped for batch document embedding."""

    def __init__(self, config: Optional[EncoderConfig] = None):
        from transformers import AutoModel, AutoTokenizer

        self.config = config or EncoderConfig()
        if self.config.deterministic:
            torch.set_num_threads(1)
        self.tokenizer = AutoTokenizer.from_pretrained(self.config.model_name)
        self.model = AutoModel.from_pretrained(self.config.model_name)
        self.model.eval()
        self.model.to(self.config.device)
        self.dim = int(self.model.config.hidden_size)

    def shard_meta(self) -> Dict[str, str]:
        return {
            "model": str(self.config.model_name),
            "max_tokens": str(self.config.max_tokens),
            "truncation": TRUNCATION_RULE,
            "pooling": "mean-final-layer-non-padding",
            "deterministic": "true" if self.config.deterministic else "false",
        }

    @torch.no_grad()
    def encode_texts(self, texts: Sequence[str]) -> np.ndarray:
        """(n, dim) float32 vectors for non-empty texts, input order."""
        encoded = self.tokenizer(
            list(texts),
            max_length=self.config.max_tokens,
            truncation=True,
            padding=True,
            return_tensors="pt",
        )
        encoded = {k: v.to(self.config.device) for k, v in encoded.items()}
        hidden = self.model(**encoded).last_hidden_state  # (n, T, dim)
        mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        summed = (hidden * mask).sum(dim=1)
        counts = mask.sum(dim=1).clamp(min=1.0)
        pooled = summed / counts
        return pooled.to(torch.float32).cpu().numpy()

    def embed_batch(
        self, items: Sequence[Tuple[str, str]]
    ) -> Tuple[List[Tuple[str, np.ndarray]], List[ItemError]]:
        """Embed (id, text) pairs; empty texts become per-item errors."""
        ids = [i for i, _ in items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids within one batch")
        good: List[Tuple[int, str]] = []
        errors: List[ItemError] = []
        for pos, (doc_id, text) in enumerate(items):
            if text.strip():
                good.append((pos, text))
            else:
                errors.append(ItemError(doc_id, "empty_text"))
        results: List[Tuple[str, np.ndarray]] = []
        if good:
            vectors = self.encode_texts([t for _, t in good])
            for (pos, _), vec in zip(good, vectors):
                results.append((items[pos][0], vec))
        return results, errors

    def embed_corpus(
        self,
        docs_path: PathLike,
        out_path: PathLike,
        batch_size: Optional[int] = None,
    ) -> CorpusSummary:
        """One input shard to one .embx shard, ids aligned to the corpus."""
        batch_size = batch_size or self.config.batch_size
        summary = CorpusSummary()
        rows: List[Tuple[str, np.ndarray]] = []
        batch: List[Tuple[str, str]] = []

        def flush():
            if not batch:
                return
            vectors, errors = self.embed_batch(batch)
            rows.extend(vectors)
            summary.errors.extend(errors)
            batch.clear()

        for doc_id, text in iter_documents(docs_path):
            batch.append((doc_id, text))
            if len(batch) >= batch_size:
                flush()
        flush()

        count = write_embx(iter(rows), self.dim, out_path, meta=self.shard_meta())
        summary.embedded = count
        summary.shards.append({
            "docs": str(docs_path),
            "embx": str(out_path),
            "rows": count,
            "errors": len(summary.errors),
        })
        return summary
