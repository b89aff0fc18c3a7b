"""Exception hierarchy for the engine.

Every validation error names the offending file, row, or entity so batch jobs
can report actionable diagnostics instead of bare stack traces.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class KbError(EngineError):
    """Knowledge-base loading or validation failure."""


class ManifestError(KbError):
    """Manifest missing, unparseable, or carrying an unsupported version."""


class ChecksumMismatch(KbError):
    def __init__(self, path: str, expected: str, actual: str):
        super().__init__(f"checksum mismatch for {path}: expected {expected}, got {actual}")
        self.path = path
        self.expected = expected
        self.actual = actual


class DimensionMismatch(KbError):
    """Embedding dimensions disagree between matrices, or query vs index."""


class DanglingRowReference(KbError):
    def __init__(self, entity_id: str, matrix: str, row: int, row_count: int):
        super().__init__(
            f"entity {entity_id!r} references {matrix} row {row}, "
            f"but the matrix has only {row_count} rows"
        )
        self.entity_id = entity_id
        self.row = row


class DuplicateEntityId(KbError):
    def __init__(self, entity_id: str):
        super().__init__(f"duplicate entity_id {entity_id!r}")
        self.entity_id = entity_id


class UnknownEntity(KbError):
    def __init__(self, entity_id: str):
        super().__init__(f"no entity with id {entity_id!r}")
        self.entity_id = entity_id


class EmbeddingFormatError(KbError):
    """Embedding file is corrupt: bad magic, truncated payload, or zero vector."""


class LinkError(EngineError):
    """Entity linking cannot proceed (empty candidates, missing text rows)."""


class BackendError(EngineError):
    """Base class for scoring-backend failures."""


class TransportError(BackendError):
    """Network-level failure after exhausting retries. Retryable in principle."""


class ProtocolError(BackendError):
    """Backend answered, but the response violates the wire contract. Fatal."""


class UnsupportedMode(BackendError):
    """Backend does not implement the requested scoring mode."""


class ScoringError(EngineError):
    """Attribution pipeline failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class MetricInputError(EngineError):
    """Evaluation inputs malformed: key-set mismatch, out-of-range values."""


class UndefinedCorrelation(MetricInputError):
    """Pearson r is undefined (zero variance input); never silently 0."""
