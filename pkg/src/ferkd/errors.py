"""Exception taxonomy shared across the pipeline."""

from __future__ import annotations


class FerkdError(Exception):
    """Base class for all pipeline errors."""


class ParameterError(FerkdError, ValueError):
    """A configuration value or argument is out of its documented range."""


class EmptyInputError(FerkdError, ValueError):
    """An operation that needs at least one element received none."""


class ShapeError(FerkdError, ValueError):
    """Mismatched dimensions between probability vectors or arrays."""


class DataError(FerkdError, ValueError):
    """Input data violates a content constraint (bad probabilities, missing gt)."""


class StateError(FerkdError, RuntimeError):
    """An operation was invoked on an object in the wrong lifecycle state."""


class NumericError(FerkdError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class AlignmentError(FerkdError, ValueError):
    """Teacher stores do not share the same crop key set.

    ``crops`` lists the offending (image_id, index_or_reason) pairs.
    """

    def __init__(self, message: str, crops: list | None = None):
        super().__init__(message)
        self.crops = crops or []


class DivergenceError(FerkdError, RuntimeError):
    """Training produced a non-finite loss; ``step`` is the failing step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class StoreFormatError(FerkdError, ValueError):
    """A label-store byte stream is malformed; ``offset`` locates the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class MagicError(StoreFormatError):
    """File does not start with the expected magic bytes."""


class VersionError(StoreFormatError):
    """Unsupported store format version."""


class TruncationError(StoreFormatError):
    """Byte stream ended before the structure it declares."""


class StoreInvariantError(FerkdError, ValueError):
    """A store's in-memory contents violate a structural invariant."""


class IngestError(DataError):
    """A teacher-dump line could not be parsed; ``line_no`` is 1-based."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ProtocolError(FerkdError):
    """Wire-protocol violation (bad frame, unexpected opcode, server ERR)."""
