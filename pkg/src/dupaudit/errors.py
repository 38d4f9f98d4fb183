"""Exception hierarchy shared by all toolkit modules.

Every data-level failure raises a subclass of :class:`DataError`, which the
CLI maps to exit code 2 (usage problems exit 1).
"""

from __future__ import annotations


class DataError(Exception):
    """Base class for malformed inputs and contract violations."""


class MalformedFileError(DataError):
    """Byte stream does not match the expected record layout."""


class InvalidLabelError(DataError):
    """A class label is out of range or not a known label string."""


class MissingLabelError(DataError):
    """A record lacks a label required by the target format."""


class ZeroVectorError(DataError):
    """A feature row has (near-)zero norm and cannot be normalized."""


class NotAFeatureFileError(DataError):
    """File does not start with the feature-container magic."""


class TruncatedFileError(DataError):
    """Declared sizes are inconsistent with the actual payload length."""


class ShapeError(DataError):
    """Dimension or length mismatch between related inputs."""


class ContractViolationError(DataError):
    """An operation precondition (e.g. normalized inputs) does not hold."""


class InsufficientRowsError(DataError):
    """Too few rows for the requested search."""


class InsufficientReferencesError(DataError):
    """Fewer reference rows than neighbors requested."""


class OutOfOrderError(DataError):
    """A label was submitted for a pair that is not the queue head."""


class CompletedSessionError(DataError):
    """The annotation session has already completed."""


class WrongQueueError(DataError):
    """Persisted records do not belong to the supplied queue."""


class RecordParseError(DataError):
    """A persisted record line cannot be parsed."""


class IncompletePurgeError(DataError):
    """Duplicate test indices lack an approved replacement decision."""

    def __init__(self, indices: list[int]):
        self.indices = sorted(indices)
        super().__init__(
            "no approved replacement for duplicate test indices: "
            + ", ".join(str(i) for i in self.indices)
        )


class ConflictError(DataError):
    """Two approved decisions target the same test index."""


class EmptySubsetError(DataError):
    """A subset metric was requested over an empty index set."""
