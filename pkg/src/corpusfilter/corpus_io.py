"""Document data model, line-delimited corpus I/O, and whitespace tokens.

A corpus is one or more UTF-8 files with one JSON object per line
(".docs.jsonl" convention). Required keys are "id", "lang", and "text";
any other keys are preserved into a flat string-valued "meta" map. Readers
stream and never hold more than one record of text in memory.

"Whitespace" everywhere in this package means the Unicode White_Space
property, so token counts stay comparable across scripts that use
non-ASCII spaces.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Union

from .errors import CorpusFormatError, DataError

# The 25 codepoints with the Unicode White_Space property (stable since
# Unicode 6.0). str.split() additionally treats U+001C..U+001F as spaces,
# so it is only used on texts where the two rules agree.
WHITESPACE = (
    "\t\n\x0b\x0c\r \x85\xa0 "
    "           "
    "    　"
)
WHITESPACE_SET = frozenset(WHITESPACE)

TOKEN_RE = re.compile(f"[^{WHITESPACE}]+")
_SPLIT_DISAGREES_RE = re.compile("[\x1c-\x1f]")

PathLike = Union[str, Path]


def tokenize(text: str) -> List[str]:
    """Split text into maximal runs of non-whitespace characters."""
    if _SPLIT_DISAGREES_RE.search(text) is None:
        return text.split()
    return TOKEN_RE.findall(text)


def ws_token_count(text: str) -> int:
    """Number of whitespace-separated tokens in text."""
    return len(tokenize(text))


@dataclass
class Document:
    """One corpus record."""

    id: str
    lang: str
    text: str
    meta: Dict[str, str] = field(default_factory=dict)

    def validate(self, allow_empty_text: bool = True) -> None:
        if not self.id:
            raise DataError("document has empty id")
        if not self.lang:
            raise DataError(f"document {self.id!r} has empty lang")
        if not allow_empty_text and not self.text:
            raise DataError(f"document {self.id!r} has empty text")


@dataclass
class CorpusManifest:
    """Sizes of a written corpus, used for token-budget math."""

    paths: List[str]
    doc_count: int
    total_ws_tokens: int
    lang: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "paths": self.paths,
                "doc_count": self.doc_count,
                "total_ws_tokens": self.total_ws_tokens,
                "lang": self.lang,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        obj = json.loads(text)
        return cls(
            paths=list(obj["paths"]),
            doc_count=int(obj["doc_count"]),
            total_ws_tokens=int(obj["total_ws_tokens"]),
            lang=str(obj["lang"]),
        )

    def save(self, path: PathLike) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "CorpusManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _meta_value(value) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def _parse_record(obj: dict, path: str, lineno: int) -> Document:
    try:
        doc_id = obj["id"]
        lang = obj["lang"]
        text = obj["text"]
    except KeyError as exc:
        raise CorpusFormatError(f"missing required key {exc}", path, lineno) from None
    if not isinstance(doc_id, str) or not doc_id:
        raise CorpusFormatError("'id' must be a non-empty string", path, lineno)
    if not isinstance(lang, str) or not lang:
        raise CorpusFormatError("'lang' must be a non-empty string", path, lineno)
    if not isinstance(text, str):
        raise CorpusFormatError("'text' must be a string", path, lineno)

    meta: Dict[str, str] = {}
    raw_meta = obj.get("meta")
    if raw_meta is not None:
        if not isinstance(raw_meta, dict):
            raise CorpusFormatError("'meta' must be an object", path, lineno)
        for k, v in raw_meta.items():
            meta[str(k)] = _meta_value(v)
    for k, v in obj.items():
        if k in ("id", "lang", "text", "meta") or k in meta:
            continue
        meta[str(k)] = _meta_value(v)
    return Document(id=doc_id, lang=lang, text=text, meta=meta)


def read_documents(path: PathLike) -> Iterator[Document]:
    """Stream documents from one line-delimited file, in file order.

    Raises CorpusFormatError with the offending line number on malformed
    lines and on duplicate ids within the file.
    """
    path = Path(path)
    seen_ids: set[str] = set()
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusFormatError(f"invalid UTF-8: {exc}", str(path), lineno) from None
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"malformed JSON: {exc.msg}", str(path), lineno) from None
            if not isinstance(obj, dict):
                raise CorpusFormatError("record is not a JSON object", path=str(path), line=lineno)
            doc = _parse_record(obj, str(path), lineno)
            if doc.id in seen_ids:
                raise CorpusFormatError(f"duplicate document id {doc.id!r}", str(path), lineno)
            seen_ids.add(doc.id)
            yield doc


def iter_corpus(paths: Union[PathLike, Sequence[PathLike]]) -> Iterator[Document]:
    """Stream documents from a file, a directory of *.docs.jsonl, or a list of files."""
    for p in corpus_files(paths):
        yield from read_documents(p)


def corpus_files(paths: Union[PathLike, Sequence[PathLike]]) -> List[Path]:
    """Resolve a corpus argument to a sorted list of document files."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    files: List[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            shard = sorted(p.glob("*.docs.jsonl")) or sorted(p.glob("*.jsonl"))
            if not shard:
                raise DataError(f"no document files found in directory {p}")
            files.extend(shard)
        else:
            files.append(p)
    return files


def document_to_json(doc: Document) -> str:
    obj: dict = {"id": doc.id, "lang": doc.lang, "text": doc.text}
    if doc.meta:
        obj["meta"] = {k: doc.meta[k] for k in sorted(doc.meta)}
    return json.dumps(obj, ensure_ascii=False)


def write_documents(
    docs: Iterable[Document],
    path: PathLike,
    allow_empty_text: bool = True,
) -> CorpusManifest:
    """Write a document stream to one file and return its manifest.

    Reading the file back reproduces the input stream exactly. Duplicate
    ids in the stream are an error.
    """
    path = Path(path)
    seen_ids: set[str] = set()
    doc_count = 0
    total_tokens = 0
    langs: set[str] = set()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            doc.validate(allow_empty_text=allow_empty_text)
            if doc.id in seen_ids:
                tmp.unlink(missing_ok=True)
                raise DataError(f"duplicate document id {doc.id!r} in output stream")
            seen_ids.add(doc.id)
            fh.write(document_to_json(doc))
            fh.write("\n")
            doc_count += 1
            total_tokens += ws_token_count(doc.text)
            langs.add(doc.lang)
    tmp.replace(path)
    lang = langs.pop() if len(langs) == 1 else ("mul" if langs else "und")
    return CorpusManifest(
        paths=[str(path)],
        doc_count=doc_count,
        total_ws_tokens=total_tokens,
        lang=lang,
    )
