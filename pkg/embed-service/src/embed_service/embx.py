"""The .embx binary vector format.

Little-endian layout: magic "EMBX1", dim as u32, row count as u64, a
u32-length-prefixed JSON metadata block (encoder tag, truncation rule,
determinism flag), the id table as u32-length-prefixed UTF-8 strings, then
the row-major float32 payload. This mirrors the consumer side of the
pipeline; files written here are read there byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np

PathLike = Union[str, Path]

MAGIC = b"EMBX1"


def write_embx(
    rows: Iterable[Tuple[str, np.ndarray]],
    dim: int,
    path: PathLike,
    meta: Dict[str, str] | None = None,
) -> int:
    """Write (id, vector) rows; returns the row count."""
    path = Path(path)
    ids: List[str] = []
    seen: set = set()
    payload = bytearray()
    for doc_id, vec in rows:
        arr = np.asarray(vec, dtype=np.float32)
        if arr.shape != (dim,):
            raise ValueError(f"vector for {doc_id!r} has shape {arr.shape}, expected ({dim},)")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite value in vector for {doc_id!r}")
        if doc_id in seen:
            raise ValueError(f"duplicate id {doc_id!r}")
        seen.add(doc_id)
        ids.append(doc_id)
        payload += arr.astype("<f4").tobytes()

    meta_blob = json.dumps(meta or {}, ensure_ascii=False, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", dim, len(ids)))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        for doc_id in ids:
            raw = doc_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(bytes(payload))
    tmp.replace(path)
    return len(ids)


def read_embx(path: PathLike) -> Tuple[List[str], np.ndarray, Dict[str, str]]:
    """Read a shard back: (ids, (n, dim) float32 matrix, metadata)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:5] != MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:5]!r}")
    off = 5
    dim, count = struct.unpack_from("<IQ", blob, off)
    off += 12
    (meta_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = json.loads(blob[off : off + meta_len].decode("utf-8")) if meta_len else {}
    off += meta_len
    ids: List[str] = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        ids.append(blob[off : off + id_len].decode("utf-8"))
        off += id_len
    need = count * dim * 4
    if len(blob) - off < need:
        raise ValueError(f"{path}: truncated payload")
    vectors = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=off)
    return ids, vectors.reshape(count, dim).copy(), meta
