"""Benchmark-overlap decontamination via fixed-length n-gram matching.

An index of 64-bit fingerprints is built from every window of n (default
13) consecutive normalized tokens of the benchmark texts. A corpus
document is contaminated if any of its own n-token windows hits the index,
and contaminated documents are removed whole.

Normalization (NFC, lowercase, punctuation/symbol removal, whitespace
split) is versioned with a tag stored in the index; an index is only
applicable to corpora normalized with the same rules.
"""

from __future__ import annotations

import json
import logging
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus_io import Document, tokenize
from .errors import DataError
from .hashing import window_fingerprints

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

NORMALIZATION_TAG = "nfc-lower-strip-punct-sym-v1"

_INDEX_MAGIC = b"NGIX1"
_INDEX_VERSION = 1


class _StripPunctSym(dict):
    """str.translate table deleting punctuation (P*) and symbol (S*) codepoints.

    Entries are computed lazily per codepoint, so the table only ever holds
    characters actually seen.
    """

    def __missing__(self, codepoint: int):
        drop = unicodedata.category(chr(codepoint)).startswith(("P", "S"))
        value = None if drop else codepoint
        self[codepoint] = value
        return value


_STRIP_TABLE = _StripPunctSym()


def normalize_for_ngrams(text: str) -> List[str]:
    """Normalize text to the token sequence used for overlap matching."""
    text = unicodedata.normalize("NFC", text).lower()
    return tokenize(text.translate(_STRIP_TABLE))


@dataclass
class NgramIndex:
    """Deduplicated fingerprints of benchmark n-grams, with source attribution."""

    n: int
    fingerprints: np.ndarray  # sorted uint64
    source_idx: np.ndarray  # uint16, parallel to fingerprints
    sources: List[str]
    normalization_tag: str = NORMALIZATION_TAG
    skipped_short_texts: int = 0

    def __len__(self) -> int:
        return len(self.fingerprints)

    def lookup(self, fps: np.ndarray) -> np.ndarray:
        """Positions into the index for each fingerprint, or -1 on miss."""
        pos = np.searchsorted(self.fingerprints, fps)
        pos = np.minimum(pos, len(self.fingerprints) - 1)
        hit = self.fingerprints[pos] == fps
        return np.where(hit, pos, -1)

    def save(self, path: PathLike) -> None:
        path = Path(path)
        tag = self.normalization_tag.encode("utf-8")
        src_blob = json.dumps(self.sources, ensure_ascii=False).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_INDEX_MAGIC)
            fh.write(struct.pack("<IIH", _INDEX_VERSION, self.n, len(tag)))
            fh.write(tag)
            fh.write(struct.pack("<I", len(src_blob)))
            fh.write(src_blob)
            fh.write(struct.pack("<Q", len(self.fingerprints)))
            fh.write(self.fingerprints.astype("<u8").tobytes())
            fh.write(self.source_idx.astype("<u2").tobytes())

    @classmethod
    def load(cls, path: PathLike) -> "NgramIndex":
        path = Path(path)
        blob = path.read_bytes()
        if blob[:5] != _INDEX_MAGIC:
            raise DataError(f"{path}: not an n-gram index file (bad magic)")
        off = 5
        version, n, tag_len = struct.unpack_from("<IIH", blob, off)
        off += 10
        if version != _INDEX_VERSION:
            raise DataError(f"{path}: unsupported index version {version}")
        tag = blob[off : off + tag_len].decode("utf-8")
        off += tag_len
        (src_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        sources = json.loads(blob[off : off + src_len].decode("utf-8"))
        off += src_len
        (count,) = struct.unpack_from("<Q", blob, off)
        off += 8
        need = count * 8 + count * 2
        if len(blob) - off < need:
            raise DataError(f"{path}: truncated index payload")
        fps = np.frombuffer(blob, dtype="<u8", count=count, offset=off).astype(np.uint64)
        off += count * 8
        src = np.frombuffer(blob, dtype="<u2", count=count, offset=off).astype(np.uint16)
        return cls(n=n, fingerprints=fps, source_idx=src, sources=sources,
                   normalization_tag=tag)


@dataclass
class BenchmarkSource:
    """One benchmark record file and the fields carrying its text."""

    name: str
    path: str
    fields: List[str] = field(default_factory=lambda: ["text"])


def _record_text(record: dict, fields: Sequence[str]) -> str:
    parts: List[str] = []
    for name in fields:
        value = record.get(name)
        if value is None:
            continue
        if isinstance(value, str):
            if value:
                parts.append(value)
        elif isinstance(value, (list, tuple)):
            parts.extend(str(v) for v in value if str(v))
        else:
            parts.append(str(value))
    return "\n".join(parts)


def iter_benchmark_texts(source: BenchmarkSource) -> Iterator[str]:
    with open(source.path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{source.path}:{lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise DataError(f"{source.path}:{lineno}: record is not a JSON object")
            text = _record_text(record, source.fields)
            if text:
                yield text


def build_index(
    benchmarks: Sequence[BenchmarkSource],
    n: int = 13,
) -> NgramIndex:
    """Fingerprint every n-token window of every benchmark text.

    A fingerprint shared by several benchmarks is stored once, attributed
    to the first contributor. Texts shorter than n tokens contribute
    nothing and are counted.
    """
    if n < 2:
        raise DataError(f"n-gram order must be >= 2, got {n}")
    if len(benchmarks) > 0xFFFF:
        raise DataError("too many benchmark sources (max 65535)")
    grams: Dict[int, int] = {}
    skipped = 0
    for src_idx, source in enumerate(benchmarks):
        before = len(grams)
        for text in iter_benchmark_texts(source):
            tokens = normalize_for_ngrams(text)
            if len(tokens) < n:
                skipped += 1
                continue
            for fp in window_fingerprints(tokens, n):
                grams.setdefault(int(fp), src_idx)
        log.info("benchmark %s: %d new %d-gram fingerprints", source.name, len(grams) - before, n)
    if not grams:
        raise DataError("no benchmark text yielded any n-gram; index would be empty")
    if skipped:
        log.info("%d benchmark texts shorter than %d tokens contributed nothing", skipped, n)

    fps = np.fromiter(grams.keys(), dtype=np.uint64, count=len(grams))
    src = np.fromiter(grams.values(), dtype=np.uint16, count=len(grams))
    order = np.argsort(fps)
    return NgramIndex(
        n=n,
        fingerprints=fps[order],
        source_idx=src[order],
        sources=[b.name for b in benchmarks],
        skipped_short_texts=skipped,
    )


@dataclass
class DecontReport:
    """Outcome of a decontamination pass."""

    total_docs: int = 0
    removed_docs: int = 0
    per_benchmark: Dict[str, int] = field(default_factory=dict)
    sample: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def contamination_rate(self) -> float:
        return self.removed_docs / self.total_docs if self.total_docs else 0.0

    def to_dict(self) -> dict:
        return {
            "total_docs": self.total_docs,
            "removed_docs": self.removed_docs,
            "contamination_rate": self.contamination_rate,
            "per_benchmark": dict(sorted(self.per_benchmark.items())),
            "sample": [list(pair) for pair in self.sample],
        }


class DecontaminationRun:
    """Stateful scanner for corpora streamed shard by shard."""

    SAMPLE_LIMIT = 20

    def __init__(self, index: NgramIndex, normalization_tag: Optional[str] = None):
        if len(index) == 0:
            raise DataError("decontamination index is empty")
        tag = normalization_tag or NORMALIZATION_TAG
        if index.normalization_tag != tag:
            raise DataError(
                f"index normalization tag {index.normalization_tag!r} does not match "
                f"this corpus scanner ({tag!r}); rebuild the index"
            )
        self.index = index
        self.report = DecontReport()

    def feed(self, doc: Document) -> Optional[Document]:
        """Return the document if clean, None if it must be removed."""
        self.report.total_docs += 1
        tokens = normalize_for_ngrams(doc.text)
        fps = window_fingerprints(tokens, self.index.n)
        if len(fps) == 0:
            return doc
        pos = self.index.lookup(fps)
        hits = np.flatnonzero(pos >= 0)
        if len(hits) == 0:
            return doc
        self.report.removed_docs += 1
        for name in {self.index.sources[self.index.source_idx[pos[h]]] for h in hits}:
            self.report.per_benchmark[name] = self.report.per_benchmark.get(name, 0) + 1
        if len(self.report.sample) < self.SAMPLE_LIMIT:
            first = int(hits[0])
            gram = " ".join(tokens[first : first + self.index.n])
            self.report.sample.append((doc.id, gram))
        return None


def decontaminate(
    docs: Iterable[Document], index: NgramIndex
) -> Tuple[List[Document], DecontReport]:
    """Drop every document sharing an n-gram with the index, keeping order."""
    run = DecontaminationRun(index)
    clean = [out for doc in docs if (out := run.feed(doc)) is not None]
    return clean, run.report
