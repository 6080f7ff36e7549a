"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config problems exit 2, data problems
exit 3, and a stage that fails mid-run exits 4.
"""

from __future__ import annotations


class CorpusFilterError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CorpusFilterError):
    """Invalid pipeline or component configuration."""


class DataError(CorpusFilterError):
    """Malformed or inconsistent input data."""


class CorpusFormatError(DataError):
    """A document file violates the line-delimited record format."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class EmbeddingFormatError(DataError):
    """An embedding shard violates the binary vector-file format."""


class TrainingError(CorpusFilterError):
    """Classifier training could not proceed or diverged."""


class StageError(CorpusFilterError):
    """A pipeline stage failed during execution."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
