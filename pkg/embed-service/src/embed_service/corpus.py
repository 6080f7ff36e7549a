"""Minimal reader for the pipeline's line-delimited document files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator, Tuple, Union

PathLike = Union[str, Path]


def iter_documents(path: PathLike) -> Iterator[Tuple[str, str]]:
    """Yield (id, text) per record; required keys are id, lang, text."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON: {exc.msg}") from None
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise ValueError(f"{path}:{lineno}: record needs 'id' and 'text'")
            yield str(obj["id"]), str(obj["text"])
