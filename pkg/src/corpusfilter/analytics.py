"""Corpus length statistics and rank-based comparison of filtering runs.

Competing filters are compared by ranking them per task (1 = best, ties
get the mean of the tied positions) and averaging ranks across tasks;
lower is better. Length statistics use whitespace token counts with the
population standard deviation.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus_io import Document, ws_token_count
from .errors import DataError

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class LengthStats:
    """Document-length summary in whitespace tokens."""

    count: int
    mean: float
    median: float
    std: float
    unit: str = "ws_tokens"

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "median": self.median,
            "std": self.std,
            "unit": self.unit,
        }


def length_stats(docs: Iterable[Document]) -> LengthStats:
    """Mean, median, and population std of per-document token counts."""
    counts = np.fromiter((ws_token_count(d.text) for d in docs), dtype=np.int64)
    if len(counts) == 0:
        raise DataError("cannot compute length statistics of an empty corpus")
    values = counts.astype(np.float64)
    return LengthStats(
        count=int(len(values)),
        mean=float(values.mean()),
        median=float(np.median(values)),
        std=float(values.std(ddof=0)),
    )


@dataclass
class MetricTable:
    """Benchmark values for several approaches across several tasks.

    values[i, j] is the score of approaches[j] on tasks[i]. All tasks are
    assumed higher-is-better unless direction says otherwise.
    """

    approaches: List[str]
    tasks: List[str]
    values: np.ndarray
    direction: str = "higher"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.direction not in ("higher", "lower"):
            raise DataError(f"direction must be 'higher' or 'lower', got {self.direction!r}")
        if self.values.ndim != 2 or self.values.shape != (len(self.tasks), len(self.approaches)):
            raise DataError(
                "metric table is not rectangular: "
                f"{len(self.tasks)} tasks x {len(self.approaches)} approaches "
                f"vs values of shape {self.values.shape}"
            )
        if self.values.size and not np.all(np.isfinite(self.values)):
            raise DataError("metric table contains non-finite values")

    @classmethod
    def from_csv(cls, path: PathLike, direction: str = "higher") -> "MetricTable":
        """Load a table whose header row names the approaches and whose
        first column names the tasks."""
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2 or len(rows[0]) < 2:
            raise DataError(f"{path}: expected a header row plus at least one task row")
        approaches = [c.strip() for c in rows[0][1:]]
        tasks: List[str] = []
        values: List[List[float]] = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(approaches) + 1:
                raise DataError(f"{path}:{lineno}: row has {len(row)} cells, expected {len(approaches) + 1}")
            tasks.append(row[0].strip())
            try:
                values.append([float(c) for c in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
        return cls(approaches=approaches, tasks=tasks, values=np.array(values), direction=direction)

    def to_csv(self, path: PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["task"] + self.approaches)
            for i, task in enumerate(self.tasks):
                writer.writerow([task] + [repr(v) for v in self.values[i].tolist()])


def fractional_ranks(values: np.ndarray, higher_is_better: bool = True) -> np.ndarray:
    """Rank positions 1..n for one task, ties averaged.

    The best value gets rank 1; entries with equal values all get the mean
    of the positions they span.
    """
    values = np.asarray(values, dtype=np.float64)
    keyed = -values if higher_is_better else values
    order = np.argsort(keyed, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and keyed[order[j + 1]] == keyed[order[i]]:
            j += 1
        # positions i+1 .. j+1 share the same value
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def average_rank(table: MetricTable) -> Dict[str, float]:
    """Average per-task fractional rank of every approach; lower is better."""
    if len(table.approaches) < 2:
        raise DataError("rank aggregation needs at least two approaches")
    if len(table.tasks) < 1:
        raise DataError("rank aggregation needs at least one task")
    higher = table.direction == "higher"
    per_task = np.vstack([fractional_ranks(row, higher) for row in table.values])
    means = per_task.mean(axis=0)
    return {name: float(means[j]) for j, name in enumerate(table.approaches)}


def compare_filters(
    baseline: Sequence[Document],
    runs: Sequence[Tuple[str, Sequence[Document]]],
    metric_table: Optional[MetricTable] = None,
) -> dict:
    """Compare filtered corpora against their unfiltered baseline.

    Every run must be a subset (by id) of the baseline corpus. The report
    carries per-run length statistics, retained-document and
    retained-token fractions, and, when a metric table is supplied, the
    average-rank aggregation.
    """
    if not runs:
        raise DataError("no filter runs to compare")
    baseline = list(baseline)
    base_ids = {d.id for d in baseline}
    base_tokens = {d.id: ws_token_count(d.text) for d in baseline}
    total_tokens = sum(base_tokens.values())

    report: dict = {
        "baseline": {
            "docs": len(baseline),
            "tokens": total_tokens,
            "length_stats": length_stats(baseline).to_dict(),
        },
        "runs": [],
    }
    for name, docs in runs:
        docs = list(docs)
        foreign = [d.id for d in docs if d.id not in base_ids]
        if foreign:
            raise DataError(
                f"run {name!r} contains {len(foreign)} documents not in the baseline "
                f"corpus, first: {foreign[0]!r}"
            )
        run_tokens = sum(base_tokens[d.id] for d in docs)
        report["runs"].append(
            {
                "name": name,
                "docs": len(docs),
                "tokens": run_tokens,
                "retained_doc_fraction": len(docs) / len(baseline) if baseline else 0.0,
                "retained_token_fraction": run_tokens / total_tokens if total_tokens else 0.0,
                "length_stats": length_stats(docs).to_dict() if docs else None,
            }
        )
    if metric_table is not None:
        report["average_rank"] = average_rank(metric_table)
    return report


def report_to_files(report: dict, json_path: PathLike, csv_path: Optional[PathLike] = None) -> None:
    """Write a comparison report as JSON plus a flat CSV for plotting."""
    Path(json_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if csv_path is None:
        return
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["name", "docs", "tokens", "retained_doc_fraction",
             "retained_token_fraction", "mean_len", "median_len", "std_len"]
        )
        base = report["baseline"]
        writer.writerow(
            ["baseline", base["docs"], base["tokens"], 1.0, 1.0,
             base["length_stats"]["mean"], base["length_stats"]["median"],
             base["length_stats"]["std"]]
        )
        for run in report["runs"]:
            ls = run["length_stats"] or {"mean": "", "median": "", "std": ""}
            writer.writerow(
                [run["name"], run["docs"], run["tokens"], run["retained_doc_fraction"],
                 run["retained_token_fraction"], ls["mean"], ls["median"], ls["std"]]
            )
