"""Exception types shared across the engine."""

from __future__ import annotations


class LagmError(Exception):
    """Base class for all engine errors."""


class InterchangeParseError(LagmError):
    """Raised when an interchange document is not syntactically valid."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class LayoutValidationError(LagmError):
    """Raised when a parsed interchange document violates a structural invariant."""


class ConfigurationError(LagmError):
    """Raised for invalid parameter combinations (chunk sizes, k values, metrics)."""


class IngestionConflictError(LagmError):
    """Raised when a document name already exists under the same company."""


class NodeNotFoundError(LagmError):
    """Raised when a graph operation references an unknown node id."""


class GraphIntegrityError(LagmError):
    """Raised when the structural hierarchy is broken (orphans, cycles)."""


class SnapshotVersionError(LagmError):
    """Raised when a snapshot file declares an unsupported version."""


class SnapshotFormatError(LagmError):
    """Raised when a snapshot file is corrupted."""

    def __init__(self, message: str, line_no: int | None = None):
        super().__init__(message)
        self.line_no = line_no


class QuerySyntaxError(LagmError):
    """Raised when graph-query text cannot be parsed."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class QueryTooComplexError(QuerySyntaxError):
    """Raised for patterns outside the supported one-hop subset."""


class MissingParameterError(LagmError):
    """Raised when query execution needs a parameter that was not supplied."""

    def __init__(self, name: str):
        super().__init__(f"missing query parameter ${name}")
        self.name = name


class TransportError(LagmError):
    """Retryable transport failure talking to a provider (timeout, connection)."""


class ProviderError(LagmError):
    """Non-retryable provider failure (non-2xx response)."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class PartialEmbeddingError(LagmError):
    """Embedding run failed for some nodes; carries the ids that failed."""

    def __init__(self, failed_ids: list[str], embedded: int):
        super().__init__(f"embedding failed for {len(failed_ids)} nodes: {failed_ids[:5]}")
        self.failed_ids = failed_ids
        self.embedded = embedded


class CompletionFailure(LagmError):
    """Answer generation failed after retrieval; carries the partial bundle."""

    def __init__(self, message: str, bundle=None):
        super().__init__(message)
        self.bundle = bundle
