"""Exception hierarchy shared across the package.

Precondition violations on plain values (empty prompt, zero messages, bad
ranges) raise ValueError; everything operational derives from SidiffError.
"""


class SidiffError(Exception):
    """Base class for all package errors."""


class TransportError(SidiffError):
    """Connection failure, timeout, or retryable HTTP status (429/5xx)."""


class ProtocolError(SidiffError):
    """Non-retryable HTTP status or malformed response body."""


class EmptyCompletion(SidiffError):
    """Chat endpoint returned no usable assistant text."""


class SchemaViolation(SidiffError):
    """Structured output still invalid after the repair loop.

    Carries the schema id, the number of attempts made, and the last
    validation error message.
    """

    def __init__(self, schema_id: str, attempts: int, last_error: str):
        super().__init__(
            f"reply failed schema '{schema_id}' after {attempts} attempts: {last_error}"
        )
        self.schema_id = schema_id
        self.attempts = attempts
        self.last_error = last_error


class DimensionMismatch(SidiffError):
    """Embedding vector length differs from the store's configured dim."""


class GenerationRejected(SidiffError):
    """Image endpoint refused the prompt."""


class DecodeError(SidiffError):
    """Image payload is not a valid PNG of the stated dimensions."""


class MissingBaseImage(SidiffError):
    """Edit requested without a base image."""


class MissingSlot(SidiffError):
    """Template placeholder has no binding in the slot map."""


class UnknownTemplate(SidiffError):
    """Template id does not name a shipped prompt asset."""


class UnknownNode(SidiffError):
    """Decision-node id has no guidance mapping for the packet kind."""


class UnknownId(SidiffError):
    """Record id not present in the store being indexed."""


class StorageError(SidiffError):
    """Knowledge-base I/O failure."""


class CorruptStore(StorageError):
    """Existing store does not match the expected schema."""


class InvariantViolation(SidiffError):
    """Record violates a store invariant (e.g. regeneration_count > E)."""
