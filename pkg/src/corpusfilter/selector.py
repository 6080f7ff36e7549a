"""Turning scores into retained corpora.

Selection is by document-count quantile: keep the top ceil(p*N) documents
by score, ties broken by ascending document id so that reruns produce the
same corpus. Token-budget inputs are converted to a retention fraction
under the uniform-tokens-per-document assumption, and replay mixing folds
a seeded sample of unfiltered documents back into a filtered corpus.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .corpus_io import CorpusManifest, Document, ws_token_count
from .errors import ConfigError, DataError
from .scores import ScoreTable

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

TIE_POLICY = "score_desc_then_id_asc"


@dataclass
class SelectionPlan:
    """The retained-id set for one score table at one retention fraction."""

    retention_fraction: float
    threshold: float
    retained: Set[str]
    tie_policy: str = TIE_POLICY
    scorer: str = "unknown"
    config_hash: str = ""
    total_docs: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "retention_fraction": self.retention_fraction,
                "threshold": self.threshold,
                "tie_policy": self.tie_policy,
                "scorer": self.scorer,
                "config_hash": self.config_hash,
                "total_docs": self.total_docs,
                "retained": sorted(self.retained),
            },
            indent=2,
        )

    def save(self, path: PathLike) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "SelectionPlan":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            retention_fraction=float(obj["retention_fraction"]),
            threshold=float(obj["threshold"]),
            retained=set(obj["retained"]),
            tie_policy=str(obj["tie_policy"]),
            scorer=str(obj.get("scorer", "unknown")),
            config_hash=str(obj.get("config_hash", "")),
            total_docs=int(obj.get("total_docs", 0)),
        )


def plan_selection(table: ScoreTable, p: float, method: str = "sort") -> SelectionPlan:
    """Plan to retain the top ceil(p*N) documents of a score table.

    method="sort" fully sorts (score desc, id asc); method="refine" finds
    the threshold by iterative histogram narrowing and only sorts the tie
    region. Both produce the identical retained set.
    """
    if not (0.0 < p <= 1.0):
        raise ConfigError(f"retention fraction must be in (0, 1], got {p}")
    n = len(table)
    if n == 0:
        raise DataError("cannot plan a selection over an empty score table")
    k = math.ceil(p * n)

    if method == "sort":
        retained, threshold = _select_by_sort(table.ids, table.scores, k)
    elif method == "refine":
        retained, threshold = _select_by_refine(table.ids, table.scores, k)
    else:
        raise ConfigError(f"unknown selection method {method!r}")

    return SelectionPlan(
        retention_fraction=p,
        threshold=threshold,
        retained=retained,
        scorer=table.scorer,
        config_hash=table.config_hash,
        total_docs=n,
    )


def _select_by_sort(ids: Sequence[str], scores: np.ndarray, k: int) -> Tuple[Set[str], float]:
    id_arr = np.array(ids)
    by_id = np.argsort(id_arr, kind="stable")
    by_key = np.argsort(-scores[by_id], kind="stable")
    order = by_id[by_key]
    top = order[:k]
    return set(id_arr[top].tolist()), float(scores[order[k - 1]])


def _select_by_refine(ids: Sequence[str], scores: np.ndarray, k: int) -> Tuple[Set[str], float]:
    threshold = _kth_largest(scores, k)
    above = np.flatnonzero(scores > threshold)
    at = np.flatnonzero(scores == threshold)
    need = k - len(above)
    tie_ids = sorted(ids[i] for i in at)[:need]
    retained = {ids[i] for i in above}
    retained.update(tie_ids)
    return retained, threshold


def _kth_largest(scores: np.ndarray, k: int, bins: int = 1024, collect_limit: int = 1 << 16) -> float:
    """Exact k-th largest score via histogram refinement.

    Each round makes one counting pass over the scores (exact float
    comparisons only), narrows to the grid cell containing the k-th
    largest, and repeats; only the final small candidate set is examined
    value by value. Memory stays bounded by the grid plus that candidate
    set.
    """
    lo = float(scores.min())
    hi = float(scores.max())
    if int(np.count_nonzero(scores >= hi)) >= k:
        return hi
    # Invariant: count_ge(lo) >= k > count_ge(hi), so the answer is in [lo, hi).
    while True:
        in_mask = (scores >= lo) & (scores < hi)
        n_inside = int(np.count_nonzero(in_mask))
        if n_inside <= collect_limit:
            break
        cuts = np.linspace(lo, hi, bins + 1)
        cell = np.searchsorted(cuts, scores[in_mask], side="right") - 1
        hist = np.bincount(np.clip(cell, 0, bins - 1), minlength=bins)
        n_ge_hi = int(np.count_nonzero(scores >= hi))
        # count_ge(cuts[i]) for every cut, exactly.
        count_ge = np.concatenate((np.cumsum(hist[::-1])[::-1] + n_ge_hi, [n_ge_hi]))
        pick = int(np.searchsorted(-count_ge, -k, side="right"))
        pick = min(max(pick, 1), bins)
        new_lo, new_hi = float(cuts[pick - 1]), float(cuts[pick])
        if (new_lo, new_hi) == (lo, hi):
            break  # interval at float resolution; resolve directly
        lo, hi = new_lo, new_hi
    inside = scores[(scores >= lo) & (scores < hi)]
    candidates = np.unique(inside)[::-1]
    n_ge = int(np.count_nonzero(scores >= hi))
    for v in candidates:
        n_ge += int(np.count_nonzero(inside == v))
        if n_ge >= k:
            return float(v)
    return lo


@dataclass
class BudgetRetention:
    """Retention fraction implied by a token budget."""

    fraction: float
    percent: int
    total_tokens: int
    target_tokens: int


def retention_for_budget(
    manifest: Union[CorpusManifest, int], target_tokens: int
) -> BudgetRetention:
    """Retention fraction that meets a token budget, assuming tokens are
    spread uniformly across documents.

    Accepts a corpus manifest or a raw total-token count. Reports the raw
    fraction and its whole-percent rounding.
    """
    total = manifest.total_ws_tokens if isinstance(manifest, CorpusManifest) else int(manifest)
    if total <= 0:
        raise DataError("corpus has no tokens; cannot derive a retention fraction")
    if target_tokens <= 0:
        raise ConfigError(f"token budget must be positive, got {target_tokens}")
    fraction = min(1.0, target_tokens / total)
    return BudgetRetention(
        fraction=fraction,
        percent=int(round(fraction * 100)),
        total_tokens=total,
        target_tokens=int(target_tokens),
    )


@dataclass
class FilterStats:
    """Sizes before and after applying a selection plan."""

    input_docs: int = 0
    input_tokens: int = 0
    retained_docs: int = 0
    retained_tokens: int = 0

    @property
    def retained_doc_fraction(self) -> float:
        return self.retained_docs / self.input_docs if self.input_docs else 0.0

    @property
    def retained_token_fraction(self) -> float:
        return self.retained_tokens / self.input_tokens if self.input_tokens else 0.0

    def to_dict(self) -> dict:
        return {
            "input_docs": self.input_docs,
            "input_tokens": self.input_tokens,
            "retained_docs": self.retained_docs,
            "retained_tokens": self.retained_tokens,
            "retained_doc_fraction": self.retained_doc_fraction,
            "retained_token_fraction": self.retained_token_fraction,
        }


class CorpusFilterRun:
    """Stateful plan application for corpora streamed shard by shard.

    Feed every document of the corpus; documents whose id is in the plan
    come back, in input order. finish() verifies that every planned id was
    actually seen.
    """

    def __init__(self, plan: SelectionPlan):
        self.plan = plan
        self.stats = FilterStats()
        self._pending: Set[str] = set(plan.retained)

    def feed(self, doc: Document) -> Optional[Document]:
        self.stats.input_docs += 1
        tokens = ws_token_count(doc.text)
        self.stats.input_tokens += tokens
        if doc.id in self._pending:
            self._pending.discard(doc.id)
            self.stats.retained_docs += 1
            self.stats.retained_tokens += tokens
            return doc
        return None

    def finish(self) -> FilterStats:
        if self._pending:
            missing = sorted(self._pending)[0]
            raise DataError(
                f"plan retains {len(self._pending)} ids missing from the corpus, "
                f"first: {missing!r}"
            )
        return self.stats


def filter_corpus(
    docs: Iterable[Document], plan: SelectionPlan
) -> Tuple[List[Document], FilterStats]:
    """Apply a selection plan to a document stream, preserving order."""
    run = CorpusFilterRun(plan)
    kept = [out for doc in docs if (out := run.feed(doc)) is not None]
    return kept, run.finish()


@dataclass
class ReplayStats:
    """Composition of a replay-mixed corpus."""

    output_docs: int
    filtered_docs: int
    replay_docs: int
    filtered_truncated: int
    reidentified: int
    rate: float


def mix_replay(
    filtered: Sequence[Document],
    raw: Sequence[Document],
    rate: float,
    seed: int,
) -> Tuple[List[Document], ReplayStats]:
    """Mix a fraction of unfiltered documents back into a filtered corpus.

    The output has M documents of which round(rate*M) are a seeded uniform
    sample of the raw corpus; the rest are the filtered documents
    (truncated only if rounding demands it). rate=0 returns the filtered
    corpus unchanged. Raw documents whose id collides with a filtered id
    are re-identified with a "replay:" prefix.
    """
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"replay rate must be in [0, 1), got {rate}")
    filtered = list(filtered)
    n_filtered = len(filtered)
    if rate == 0.0:
        stats = ReplayStats(n_filtered, n_filtered, 0, 0, 0, 0.0)
        return filtered, stats
    if not raw:
        raise DataError("replay rate > 0 but the raw corpus is empty")

    total = round(n_filtered / (1.0 - rate))
    n_replay = round(rate * total)
    keep = total - n_replay
    if keep > n_filtered:
        total -= 1
        n_replay = round(rate * total)
        keep = total - n_replay
    if n_replay > len(raw):
        raise DataError(
            f"replay needs {n_replay} raw documents but only {len(raw)} are available"
        )

    rng = random.Random(seed)
    picks = sorted(rng.sample(range(len(raw)), n_replay))
    filtered_ids = {d.id for d in filtered[:keep]}
    reidentified = 0
    replayed: List[Document] = []
    for i in picks:
        doc = raw[i]
        if doc.id in filtered_ids:
            doc = Document(id=f"replay:{doc.id}", lang=doc.lang, text=doc.text,
                           meta=dict(doc.meta))
            reidentified += 1
        replayed.append(doc)

    mixed = filtered[:keep] + replayed
    rng.shuffle(mixed)
    stats = ReplayStats(
        output_docs=total,
        filtered_docs=keep,
        replay_docs=n_replay,
        filtered_truncated=n_filtered - keep,
        reidentified=reidentified,
        rate=n_replay / total if total else 0.0,
    )
    if reidentified:
        log.warning("replay re-identified %d colliding raw document ids", reidentified)
    return mixed, stats
