"""TCP batch server for calibrated label stores.

Training workers connect over a socket and pull shuffled batches of crop
records, so the (large) label store lives in one process.  The protocol
is length-prefixed binary frames, little-endian throughout::

    u32 payload length, then payload
    payload = u8 opcode + body

Opcodes::

    HELLO = 1   client body empty; server replies HELLO with
                u16 version, u32 num_classes, u16 top_k, u16 bits,
                u32 epoch_size (kept crops per epoch)
    GET_BATCH = 2  client body u32 n, u64 epoch_seed; server replies BATCH
    BATCH = 3   u32 count, then per record:
                u16 id length + UTF-8 image id,
                4*f32 bbox, u8 flip, u8 status, u16 gt (0xFFFF missing),
                top_k * (u32 class index, u16 level)
    STATS = 4   client body empty; server replies STATS with
                u32 num_images, u32 num_crops, u32 kept, u64 served
                (served counts records sent on this connection)
    ERR = 5     u16 code, u16 length, UTF-8 message
    BYE = 6     either direction; server echoes BYE and closes

Each connection owns its own cursor over the kept (non-discard) records.
An epoch is a full shuffled pass; the order comes from the client's
``epoch_seed`` mixed with the epoch counter, so reconnecting with the
same seed replays the same schedule.  The final batch of an epoch may be
short; the next request starts the next epoch with a fresh shuffle.
Discarded crops are never sent.
"""

from __future__ import annotations

import socket
import socketserver
import struct

from .calibrate import CropStatus
from .errors import ParameterError, ProtocolError, StateError
from .rng import derive
from .sampler import OrderPolicy, order_records
from .store import _CROP_FIXED, _GT_MISSING, _IMAGE_HEAD, _PAIR, LabelStore

OP_HELLO = 1
OP_GET_BATCH = 2
OP_BATCH = 3
OP_STATS = 4
OP_ERR = 5
OP_BYE = 6

ERR_BAD_OPCODE = 1
ERR_BAD_PAYLOAD = 2
ERR_STATE = 3

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024

_LEN = struct.Struct("<I")
_HELLO_BODY = struct.Struct("<HIHHI")
_GET_BATCH_BODY = struct.Struct("<IQ")
_STATS_BODY = struct.Struct("<IIIQ")


def recv_exact(sock: socket.socket, n: int) -> bytes:
    """Read exactly ``n`` bytes or raise on a closed/broken peer."""
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ProtocolError(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    """Read one frame; returns (opcode, body)."""
    (length,) = _LEN.unpack(recv_exact(sock, _LEN.size))
    if length < 1:
        raise ProtocolError("frame without an opcode")
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit {MAX_FRAME}")
    payload = recv_exact(sock, length)
    return payload[0], payload[1:]


def write_frame(sock: socket.socket, opcode: int, body: bytes = b"") -> None:
    sock.sendall(_LEN.pack(1 + len(body)) + bytes([opcode]) + body)


def encode_record(rec) -> bytes:
    raw_id = rec.image_id.encode("utf-8")
    b = rec.bbox
    gt = _GT_MISSING if rec.gt_class is None else rec.gt_class.class_index
    parts = [
        _IMAGE_HEAD.pack(len(raw_id)),
        raw_id,
        _CROP_FIXED.pack(b.x, b.y, b.w, b.h, int(rec.hflip), int(rec.status), gt),
    ]
    parts.extend(_PAIR.pack(c, q) for c, q in rec.soft_label.entries)
    return b"".join(parts)


class _Connection(socketserver.BaseRequestHandler):
    """Per-connection batch cursor; see the module docstring for framing."""

    def setup(self):
        self.kept = self.server.kept
        self.order = None
        self.cursor = 0
        self.epoch = 0
        self.served = 0

    def handle(self):
        while True:
            try:
                opcode, body = read_frame(self.request)
            except ProtocolError:
                return
            try:
                if opcode == OP_HELLO:
                    self._hello(body)
                elif opcode == OP_GET_BATCH:
                    self._get_batch(body)
                elif opcode == OP_STATS:
                    self._stats(body)
                elif opcode == OP_BYE:
                    write_frame(self.request, OP_BYE)
                    return
                else:
                    self._err(ERR_BAD_OPCODE, f"unknown opcode {opcode}")
            except (BrokenPipeError, ConnectionResetError, OSError):
                return

    def _err(self, code: int, message: str):
        raw = message.encode("utf-8")
        write_frame(
            self.request, OP_ERR, struct.pack("<HH", code, len(raw)) + raw
        )

    def _hello(self, body: bytes):
        if body:
            self._err(ERR_BAD_PAYLOAD, "hello takes no body")
            return
        store = self.server.store
        write_frame(
            self.request,
            OP_HELLO,
            _HELLO_BODY.pack(
                PROTOCOL_VERSION,
                store.num_classes,
                store.top_k,
                store.bits,
                len(self.kept),
            ),
        )

    def _stats(self, body: bytes):
        if body:
            self._err(ERR_BAD_PAYLOAD, "stats takes no body")
            return
        store = self.server.store
        write_frame(
            self.request,
            OP_STATS,
            _STATS_BODY.pack(
                store.num_images, store.num_crops, len(self.kept), self.served
            ),
        )

    def _get_batch(self, body: bytes):
        if len(body) != _GET_BATCH_BODY.size:
            self._err(ERR_BAD_PAYLOAD, f"get_batch body must be {_GET_BATCH_BODY.size} bytes")
            return
        n, epoch_seed = _GET_BATCH_BODY.unpack(body)
        if n == 0:
            self._err(ERR_BAD_PAYLOAD, "batch size must be positive")
            return
        if not self.kept:
            self._err(ERR_STATE, "store has no records to serve")
            return
        if self.order is None:
            self.order = order_records(
                self.kept, self.server.policy, derive(epoch_seed, "serve", self.epoch)
            )
        take = min(n, len(self.kept) - self.cursor)
        picked = [self.kept[i] for i in self.order[self.cursor : self.cursor + take]]
        self.cursor += take
        if self.cursor >= len(self.kept):
            self.cursor = 0
            self.epoch += 1
            self.order = None
        self.served += take
        body_out = [_LEN.pack(take)]
        body_out.extend(encode_record(r) for r in picked)
        write_frame(self.request, OP_BATCH, b"".join(body_out))


class LabelServer(socketserver.ThreadingTCPServer):
    """Serves one calibrated store; one thread per connection.

    ``policy`` sets the per-epoch batch order (random by default; the
    curriculum orders work too since difficulty comes from the labels).
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        address: tuple[str, int],
        store: LabelStore,
        policy: OrderPolicy | None = None,
    ):
        if not store.is_calibrated:
            raise StateError("refusing to serve an uncalibrated store")
        self.store = store
        self.policy = policy if policy is not None else OrderPolicy()
        self.kept = [r for r in store.records() if r.status is not CropStatus.UR]
        super().__init__(address, _Connection)

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve(
    store: LabelStore,
    host: str = "127.0.0.1",
    port: int = 0,
    policy: OrderPolicy | None = None,
) -> LabelServer:
    """Bind a server (port 0 picks a free port); caller runs serve_forever."""
    if not 0 <= port <= 0xFFFF:
        raise ParameterError(f"port must be in [0, 65535], got {port}")
    return LabelServer((host, port), store, policy)
