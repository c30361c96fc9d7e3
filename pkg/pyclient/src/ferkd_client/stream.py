"""Socket client for the batch-serving protocol.

Frames are a u32 little-endian payload length followed by the payload;
the first payload byte is the opcode.  The client speaks::

    HELLO (1)      empty body; the reply carries u16 protocol version,
                   u32 num_classes, u16 top_k, u16 bits, u32 epoch_size
    GET_BATCH (2)  u32 batch size, u64 epoch seed; answered by BATCH
    BATCH (3)      u32 count, then per record a u16-length UTF-8 image id,
                   4*f32 bbox, u8 flip, u8 status, u16 ground truth
                   (0xFFFF absent), top_k * (u32 class, u16 level)
    ERR (5)        u16 code, u16 length, UTF-8 message
    BYE (6)        closes the session; the server echoes it

The parsing helpers take a ``read(n)`` callable rather than a socket, so
a recorded byte transcript replays through the same code path as a live
connection.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from typing import Callable, Iterator

from .errors import ProtocolError, ServerError
from .store_file import GT_MISSING, STATUS_NAMES, ClientRecord

OP_HELLO = 1
OP_GET_BATCH = 2
OP_BATCH = 3
OP_STATS = 4
OP_ERR = 5
OP_BYE = 6

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024

_LEN = struct.Struct("<I")
_HELLO_BODY = struct.Struct("<HIHHI")
_GET_BATCH_BODY = struct.Struct("<IQ")
_ERR_HEAD = struct.Struct("<HH")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_CROP_FIXED = struct.Struct("<ffffBBH")
_PAIR = struct.Struct("<IH")


@dataclass(frozen=True)
class ServerInfo:
    """Contents of the server's HELLO reply."""

    version: int
    num_classes: int
    top_k: int
    bits: int
    epoch_size: int


def read_exact(read: Callable[[int], bytes], n: int) -> bytes:
    """Collect exactly ``n`` bytes from a recv-style callable."""
    chunks = []
    got = 0
    while got < n:
        chunk = read(n - got)
        if not chunk:
            raise ProtocolError(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(read: Callable[[int], bytes]) -> tuple[int, bytes]:
    """Read one length-prefixed frame; returns (opcode, body)."""
    (length,) = _LEN.unpack(read_exact(read, _LEN.size))
    if length < 1:
        raise ProtocolError("frame without an opcode")
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit {MAX_FRAME}")
    payload = read_exact(read, length)
    return payload[0], payload[1:]


def frame(opcode: int, body: bytes = b"") -> bytes:
    return _LEN.pack(1 + len(body)) + bytes([opcode]) + body


def parse_hello(body: bytes) -> ServerInfo:
    if len(body) != _HELLO_BODY.size:
        raise ProtocolError(f"HELLO body of {len(body)} bytes, expected {_HELLO_BODY.size}")
    version, num_classes, top_k, bits, epoch_size = _HELLO_BODY.unpack(body)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"server speaks protocol {version}, client speaks {PROTOCOL_VERSION}")
    return ServerInfo(version, num_classes, top_k, bits, epoch_size)


def parse_batch(body: bytes, top_k: int) -> list[ClientRecord]:
    """Decode a BATCH body into records; the body must be fully consumed."""
    if len(body) < _U32.size:
        raise ProtocolError("BATCH body shorter than its count field")
    (count,) = _U32.unpack_from(body, 0)
    pos = _U32.size
    records = []
    try:
        for _ in range(count):
            (idlen,) = _U16.unpack_from(body, pos)
            pos += _U16.size
            if len(body) < pos + idlen:
                raise ProtocolError("BATCH body ends inside an image id")
            try:
                image_id = body[pos : pos + idlen].decode("utf-8")
            except UnicodeDecodeError:
                raise ProtocolError("image id is not UTF-8") from None
            pos += idlen
            x, y, w, h, flip, status_byte, gt_raw = _CROP_FIXED.unpack_from(body, pos)
            pos += _CROP_FIXED.size
            entries = []
            for _ in range(top_k):
                cls, level = _PAIR.unpack_from(body, pos)
                pos += _PAIR.size
                entries.append((cls, level))
            records.append(
                ClientRecord(
                    image_id=image_id,
                    bbox=(x, y, w, h),
                    hflip=bool(flip),
                    status=STATUS_NAMES.get(status_byte),
                    gt_class=None if gt_raw == GT_MISSING else gt_raw,
                    entries=tuple(entries),
                    calibrated=None,
                )
            )
    except struct.error:
        raise ProtocolError("BATCH body ends inside a record") from None
    if pos != len(body):
        raise ProtocolError(f"{len(body) - pos} unconsumed bytes in BATCH body")
    return records


def _expect(opcode: int, body: bytes, wanted: int) -> bytes:
    """Surface ERR frames and opcode mismatches; returns the body."""
    if opcode == OP_ERR:
        if len(body) < _ERR_HEAD.size:
            raise ProtocolError("ERR frame without a header")
        code, msg_len = _ERR_HEAD.unpack_from(body, 0)
        msg = body[_ERR_HEAD.size : _ERR_HEAD.size + msg_len].decode("utf-8", "replace")
        raise ServerError(code, msg)
    if opcode != wanted:
        raise ProtocolError(f"expected opcode {wanted}, got {opcode}")
    return body


def stream_batches(
    endpoint: tuple[str, int], n: int, epoch_seed: int
) -> Iterator[list[ClientRecord]]:
    """Connect and yield batches of ``n`` records, epoch after epoch.

    Each epoch is a full pass over the server's kept records in the shuffle
    derived from ``epoch_seed``; its final batch may be shorter than ``n``.
    The iterator owns its connection and must not be shared between
    consumers; closing it sends BYE and disconnects.  Server-side failures
    raise :class:`ServerError`, connection failures raise the usual
    ``OSError`` family.
    """
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    if not 0 <= epoch_seed < 1 << 64:
        raise ValueError(f"epoch seed must fit in 64 bits, got {epoch_seed}")
    sock = socket.create_connection(endpoint)
    try:
        sock.sendall(frame(OP_HELLO))
        opcode, body = read_frame(sock.recv)
        info = parse_hello(_expect(opcode, body, OP_HELLO))
        request = frame(OP_GET_BATCH, _GET_BATCH_BODY.pack(n, epoch_seed))
        while True:
            sock.sendall(request)
            opcode, body = read_frame(sock.recv)
            yield parse_batch(_expect(opcode, body, OP_BATCH), info.top_k)
    finally:
        try:
            sock.sendall(frame(OP_BYE))
        except OSError:
            pass
        sock.close()


def hello(endpoint: tuple[str, int]) -> ServerInfo:
    """One-shot handshake; useful to size an epoch before streaming."""
    sock = socket.create_connection(endpoint)
    try:
        sock.sendall(frame(OP_HELLO))
        opcode, body = read_frame(sock.recv)
        info = parse_hello(_expect(opcode, body, OP_HELLO))
        sock.sendall(frame(OP_BYE))
        return info
    finally:
        sock.close()
