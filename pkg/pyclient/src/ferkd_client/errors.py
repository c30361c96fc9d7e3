"""Error kinds, matching the producer's taxonomy for files and the wire."""

from __future__ import annotations


class ClientError(Exception):
    """Base class for everything this package raises on purpose."""


class FormatError(ClientError, ValueError):
    """A label-store byte stream is malformed; ``offset`` locates the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Unsupported store format version."""


class TruncationError(FormatError):
    """Byte stream ended before the structure it declares."""


class ProtocolError(ClientError):
    """Wire-protocol violation: bad frame, wrong opcode, closed mid-message."""


class ServerError(ProtocolError):
    """The server answered with an ERR frame.

    ``code`` is the numeric error code, ``server_message`` the UTF-8 text.
    """

    def __init__(self, code: int, server_message: str):
        super().__init__(f"server error {code}: {server_message}")
        self.code = code
        self.server_message = server_message
