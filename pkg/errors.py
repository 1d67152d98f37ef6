"""Exception hierarchy shared by every stage of the semantic filter pipeline."""

from typing import Optional


class SemanticFilterError(Exception):
    """Base class for all pipeline errors. The CLI maps these to exit code 1."""


class ConfigError(SemanticFilterError, ValueError):
    pass


class TableFormatError(SemanticFilterError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DuplicateIdError(TableFormatError):
    def __init__(self, record_id: int, line: int):
        super().__init__(f"duplicate record id {record_id}", line=line)
        self.record_id = record_id


class PromptRenderError(SemanticFilterError, ValueError):
    pass


class EmbeddingFormatError(SemanticFilterError, ValueError):
    pass


class BadMagicError(EmbeddingFormatError):
    pass


class VersionMismatchError(EmbeddingFormatError):
    pass


class TruncatedFileError(EmbeddingFormatError):
    pass


class EmbeddingDimensionError(SemanticFilterError, ValueError):
    pass


class EmbeddingProviderError(SemanticFilterError):
    pass


class DistanceError(SemanticFilterError, ValueError):
    pass


class OracleError(SemanticFilterError):
    pass


class OracleTransportError(OracleError):
    pass


class UndecidableCompletionError(OracleError, ValueError):
    def __init__(self, completion: str, record_id: Optional[int] = None):
        where = "" if record_id is None else f" for record {record_id}"
        super().__init__(f"completion{where} contains neither 'true' nor 'false': {completion!r}")
        self.completion = completion
        self.record_id = record_id


class TruthLabelError(OracleError, ValueError):
    """A mock oracle found a ground-truth value it cannot read as a boolean."""

    def __init__(self, message: str, record_id: Optional[int] = None):
        super().__init__(message if record_id is None else f"record {record_id}: {message}")
        self.record_id = record_id


class VoteError(SemanticFilterError, ValueError):
    pass


class FilterAborted(SemanticFilterError):
    """Raised when the oracle fails mid-run; `partial` holds the labels decided so far."""

    def __init__(self, cause: Exception, partial):
        super().__init__(f"semantic filter aborted after {len(partial.labels)} labels: {cause}")
        self.cause = cause
        self.partial = partial


class EvaluationError(SemanticFilterError, ValueError):
    pass
