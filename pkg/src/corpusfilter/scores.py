"""Per-document score tables and their TSV serialization.

A score table is the handoff between any scorer (n-gram, MLP, cosine) and
the selector. On disk it is a TSV of "doc_id<TAB>score" rows preceded by
one comment line naming the scorer and the producing config hash; float
values are written with repr() so they round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np

from .errors import DataError

PathLike = Union[str, Path]


@dataclass
class ScoreTable:
    """Scores for a set of documents, aligned id-to-row."""

    ids: List[str]
    scores: np.ndarray
    scorer: str = "unknown"
    config_hash: str = ""
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.ids) != len(self.scores):
            raise DataError(
                f"score table has {len(self.ids)} ids but {len(self.scores)} scores"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("score table contains duplicate document ids")
        if len(self.scores) and not np.all(np.isfinite(self.scores)):
            bad = self.ids[int(np.flatnonzero(~np.isfinite(self.scores))[0])]
            raise DataError(f"non-finite score for document {bad!r}")

    def __len__(self) -> int:
        return len(self.ids)

    def entries(self) -> Iterator[Tuple[str, float]]:
        for i, doc_id in enumerate(self.ids):
            yield doc_id, float(self.scores[i])

    def save(self, path: PathLike) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            header = f"# scorer={self.scorer}\tconfig_hash={self.config_hash}"
            for k in sorted(self.meta):
                header += f"\t{k}={self.meta[k]}"
            fh.write(header + "\n")
            for doc_id, score in self.entries():
                fh.write(f"{doc_id}\t{score!r}\n")

    @classmethod
    def load(cls, path: PathLike) -> "ScoreTable":
        path = Path(path)
        ids: List[str] = []
        values: List[float] = []
        scorer = "unknown"
        config_hash = ""
        meta: Dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    for part in line[1:].strip().split("\t"):
                        if "=" not in part:
                            continue
                        k, v = part.split("=", 1)
                        if k == "scorer":
                            scorer = v
                        elif k == "config_hash":
                            config_hash = v
                        else:
                            meta[k] = v
                    continue
                cols = line.split("\t")
                if len(cols) != 2:
                    raise DataError(f"{path}:{lineno}: expected 'doc_id<TAB>score'")
                ids.append(cols[0])
                try:
                    values.append(float(cols[1]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad score {cols[1]!r}") from None
        return cls(ids=ids, scores=np.array(values, dtype=np.float64),
                   scorer=scorer, config_hash=config_hash, meta=meta)


def concat_tables(tables: Sequence[ScoreTable]) -> ScoreTable:
    """Concatenate shard-level tables produced by one scorer into one."""
    if not tables:
        raise DataError("no score tables to concatenate")
    scorers = {t.scorer for t in tables}
    hashes = {t.config_hash for t in tables}
    if len(scorers) > 1 or len(hashes) > 1:
        raise DataError("cannot concatenate score tables from different scorers/configs")
    ids: List[str] = []
    for t in tables:
        ids.extend(t.ids)
    scores = np.concatenate([t.scores for t in tables]) if tables else np.empty(0)
    meta: Dict[str, str] = {}
    for t in tables:
        meta.update(t.meta)
    return ScoreTable(ids=ids, scores=scores, scorer=tables[0].scorer,
                      config_hash=tables[0].config_hash, meta=meta)
