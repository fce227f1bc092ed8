"""Exception hierarchy shared across the engine.

Every error carries a short machine-parsable ``code`` so the CLI and the
HTTP service can report failures uniformly.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine failures."""

    code = "E_ENGINE"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class CorpusParseError(EngineError):
    code = "E_CORPUS_PARSE"


class DuplicateIdError(EngineError):
    code = "E_DUPLICATE_ID"


class MissingFileError(EngineError):
    code = "E_MISSING_FILE"


class OutputExistsError(EngineError):
    code = "E_OUTPUT_EXISTS"


class IndexFormatError(EngineError):
    code = "E_INDEX_FORMAT"


class IndexBuildError(EngineError):
    code = "E_INDEX_BUILD"


class ScorerFormatError(EngineError):
    code = "E_SCORER_FORMAT"


class VocabularyMismatchError(EngineError):
    code = "E_VOCAB_MISMATCH"


class QrelsError(EngineError):
    code = "E_QRELS"


class ConfigError(EngineError):
    code = "E_CONFIG"
