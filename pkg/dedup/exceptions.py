"""
Exception hierarchy for the deduplication engine.

The command-line layer maps each family to an exit code:
usage/config errors exit 1, data errors exit 2, artifact errors exit 3.
"""

from typing import Optional


class DedupError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(DedupError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class DataError(DedupError, ValueError):
    """Input data that violates the dataset contract."""

    exit_code = 2


class ParseError(DataError):
    """A dataset record could not be parsed."""

    def __init__(self, message: str, field: Optional[str] = None, line_number: Optional[int] = None):
        self.field = field
        self.line_number = line_number
        location = f"line {line_number}: " if line_number is not None else ""
        field_part = f" [{field}]" if field else ""
        super().__init__(f"{location}{message}{field_part}")


class EmptyInputError(DataError):
    """An operation received an empty collection it cannot work with."""


class ResourceLimitError(DataError):
    """A request exceeds the configured memory budget."""


class ModelError(DedupError, ValueError):
    """Shape mismatch or violated precondition inside a model."""


class StoreError(DedupError, ValueError):
    """Embedding store misuse: duplicate ids, wrong widths, empty store."""


class ArtifactError(DedupError):
    """A persisted artifact is missing, corrupt or incompatible."""

    exit_code = 3


class VersionMismatchError(ArtifactError):
    """Artifact version header does not match this build."""


class MissingArtifactError(ArtifactError):
    """An artifact required by a command is not present."""


class RemoteEmbeddingError(DedupError):
    """The remote embeddings service failed after retries."""

    exit_code = 2


class RemoteDimensionError(RemoteEmbeddingError):
    """The remote service returned a vector of unexpected width."""


class OfflineError(RemoteEmbeddingError):
    """Remote embedding requested while the client is offline."""


class StateLockedError(DedupError):
    """Another command holds the state directory lock."""
