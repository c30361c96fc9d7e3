"""Minimal client for ferkd label stores: file reader plus batch streaming.

Stdlib only, so a training stack can vendor the package as-is.  Two entry
points cover the whole surface::

    records = ferkd_client.open_store("labels.ferk")
    for batch in ferkd_client.stream_batches(("10.0.0.5", 9000), 256, seed):
        ...
"""

from .errors import (
    ClientError,
    FormatError,
    MagicError,
    ProtocolError,
    ServerError,
    TruncationError,
    VersionError,
)
from .store_file import (
    ClientRecord,
    StoreHeader,
    open_store,
    parse_store,
    read_header,
    recover_full,
    smooth_full,
)
from .stream import (
    ServerInfo,
    frame,
    hello,
    parse_batch,
    parse_hello,
    read_frame,
    stream_batches,
)

__version__ = "0.1.0"

__all__ = [
    "ClientError",
    "ClientRecord",
    "FormatError",
    "MagicError",
    "ProtocolError",
    "ServerError",
    "ServerInfo",
    "StoreHeader",
    "TruncationError",
    "VersionError",
    "frame",
    "hello",
    "open_store",
    "parse_batch",
    "parse_hello",
    "parse_store",
    "read_frame",
    "read_header",
    "recover_full",
    "smooth_full",
    "stream_batches",
]
