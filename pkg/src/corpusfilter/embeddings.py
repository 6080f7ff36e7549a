"""Binary storage of per-document embedding vectors (".embx").

Layout, all little-endian: the magic "EMBX1" (the trailing digit is the
format version), dim as u32, row count as u64, a u32-length-prefixed JSON
metadata block (producer model tag and settings), the id table as
u32-length-prefixed UTF-8 strings, then the row-major float32 payload.
Vectors are stored exactly as produced; consumers normalize where their
math needs it. Files are immutable once written.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np

from .corpus_io import Document
from .errors import DataError, EmbeddingFormatError

PathLike = Union[str, Path]

_MAGIC = b"EMBX1"


@dataclass
class EmbeddingMatrix:
    """Dense per-document vectors, row i belonging to ids[i]."""

    dim: int
    ids: List[str]
    vectors: np.ndarray  # (n, dim) float32
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape != (len(self.ids), self.dim):
            raise DataError(
                f"embedding matrix shape {self.vectors.shape} does not match "
                f"{len(self.ids)} ids x dim {self.dim}"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("embedding matrix contains duplicate ids")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            row = int(np.flatnonzero(~np.isfinite(self.vectors).all(axis=1))[0])
            raise DataError(f"non-finite embedding for id {self.ids[row]!r}")

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, doc_id: str) -> np.ndarray:
        try:
            return self.vectors[self.ids.index(doc_id)]
        except ValueError:
            raise DataError(f"no embedding for id {doc_id!r}") from None

    def index(self) -> Dict[str, int]:
        return {doc_id: i for i, doc_id in enumerate(self.ids)}


@dataclass
class WriteSummary:
    path: str
    count: int
    dim: int


def write_embeddings(
    rows: Iterable[Tuple[str, np.ndarray]],
    dim: int,
    path: PathLike,
    meta: Dict[str, str] | None = None,
) -> WriteSummary:
    """Stream (id, vector) rows into one .embx file.

    Every vector must have exactly `dim` finite float values; violations
    abort the write naming the offending id.
    """
    path = Path(path)
    tmp_payload = path.with_name(path.name + ".payload.tmp")
    ids: List[str] = []
    seen: set = set()
    try:
        with open(tmp_payload, "wb") as payload:
            for doc_id, vector in rows:
                vec = np.asarray(vector, dtype=np.float32)
                if vec.shape != (dim,):
                    raise DataError(
                        f"embedding for id {doc_id!r} has shape {vec.shape}, expected ({dim},)"
                    )
                if not np.all(np.isfinite(vec)):
                    raise DataError(f"non-finite embedding value for id {doc_id!r}")
                if doc_id in seen:
                    raise DataError(f"duplicate embedding id {doc_id!r}")
                seen.add(doc_id)
                ids.append(doc_id)
                payload.write(vec.astype("<f4").tobytes())
        meta_blob = json.dumps(meta or {}, ensure_ascii=False, sort_keys=True).encode("utf-8")
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IQ", dim, len(ids)))
            fh.write(struct.pack("<I", len(meta_blob)))
            fh.write(meta_blob)
            for doc_id in ids:
                raw = doc_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            with open(tmp_payload, "rb") as payload:
                while True:
                    block = payload.read(1 << 20)
                    if not block:
                        break
                    fh.write(block)
        tmp.replace(path)
    finally:
        tmp_payload.unlink(missing_ok=True)
    return WriteSummary(path=str(path), count=len(ids), dim=dim)


def _read_header(fh) -> Tuple[int, int, Dict[str, str], List[str]]:
    magic = fh.read(5)
    if magic != _MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}; not an .embx file")
    head = fh.read(12)
    if len(head) != 12:
        raise EmbeddingFormatError("truncated header")
    dim, count = struct.unpack("<IQ", head)
    raw = fh.read(4)
    if len(raw) != 4:
        raise EmbeddingFormatError("truncated metadata block")
    (meta_len,) = struct.unpack("<I", raw)
    meta_blob = fh.read(meta_len)
    if len(meta_blob) != meta_len:
        raise EmbeddingFormatError("truncated metadata block")
    meta = json.loads(meta_blob.decode("utf-8")) if meta_len else {}
    ids: List[str] = []
    seen: set = set()
    for _ in range(count):
        raw = fh.read(4)
        if len(raw) != 4:
            raise EmbeddingFormatError("truncated id table")
        (id_len,) = struct.unpack("<I", raw)
        raw_id = fh.read(id_len)
        if len(raw_id) != id_len:
            raise EmbeddingFormatError("truncated id table")
        doc_id = raw_id.decode("utf-8")
        if doc_id in seen:
            raise EmbeddingFormatError(f"duplicate id {doc_id!r} in id table")
        seen.add(doc_id)
        ids.append(doc_id)
    return dim, count, meta, ids


def read_embeddings(path: PathLike) -> EmbeddingMatrix:
    """Load a whole .embx file into memory."""
    path = Path(path)
    with open(path, "rb") as fh:
        dim, count, meta, ids = _read_header(fh)
        payload = fh.read(count * dim * 4 + 1)
        if len(payload) < count * dim * 4:
            raise EmbeddingFormatError(f"{path}: truncated payload")
        if len(payload) > count * dim * 4:
            raise EmbeddingFormatError(f"{path}: trailing bytes after payload")
    vectors = np.frombuffer(payload, dtype="<f4", count=count * dim).reshape(count, dim)
    if vectors.size and not np.all(np.isfinite(vectors)):
        row = int(np.flatnonzero(~np.isfinite(vectors).all(axis=1))[0])
        raise EmbeddingFormatError(f"{path}: non-finite value in row for id {ids[row]!r}")
    return EmbeddingMatrix(dim=dim, ids=ids, vectors=vectors.copy(), meta=meta)


def iter_embeddings(path: PathLike) -> Iterator[Tuple[str, np.ndarray]]:
    """Stream (id, vector) rows without loading the payload at once."""
    path = Path(path)
    with open(path, "rb") as fh:
        dim, count, _meta, ids = _read_header(fh)
        row_bytes = dim * 4
        for doc_id in ids:
            raw = fh.read(row_bytes)
            if len(raw) != row_bytes:
                raise EmbeddingFormatError(f"{path}: truncated payload at id {doc_id!r}")
            vec = np.frombuffer(raw, dtype="<f4").copy()
            if not np.all(np.isfinite(vec)):
                raise EmbeddingFormatError(f"{path}: non-finite value for id {doc_id!r}")
            yield doc_id, vec


def read_embedding_ids(path: PathLike) -> Tuple[int, List[str], Dict[str, str]]:
    """Just the header: dimension, ids, and metadata."""
    with open(path, "rb") as fh:
        dim, _count, meta, ids = _read_header(fh)
    return dim, ids, meta


@dataclass
class AlignmentReport:
    """Documents without embeddings and embeddings without documents."""

    missing: List[str]
    orphans: List[str]

    @property
    def aligned(self) -> bool:
        return not self.missing and not self.orphans

    def to_dict(self) -> dict:
        return {
            "aligned": self.aligned,
            "missing": self.missing,
            "orphans": self.orphans,
        }


def align(
    embedding_ids: Union[EmbeddingMatrix, Sequence[str]],
    docs: Iterable[Document],
) -> AlignmentReport:
    """Report id mismatches between an embedding set and a corpus."""
    emb_ids = embedding_ids.ids if isinstance(embedding_ids, EmbeddingMatrix) else list(embedding_ids)
    emb_set = set(emb_ids)
    doc_ids = [d.id for d in docs]
    doc_set = set(doc_ids)
    return AlignmentReport(
        missing=[i for i in doc_ids if i not in emb_set],
        orphans=[i for i in emb_ids if i not in doc_set],
    )
