"""Reader for the binary label-store file format.

Layout, all little-endian::

    magic "FERK"
    u16 version (currently 1)
    u32 num_classes, u16 top_k, u16 bits
    5 * f64 (scale_min, scale_max, ratio_min, ratio_max, flip_prob)
        + u16 max_attempts + u64 seed          -- crop sampler settings
    u8 calibrated flag; if 1:
        4 * f64 (t_low, t_mid, t_top, epsilon) -- calibration settings
    u32 image count
    per image (ids strictly ascending):
        u16 id length, UTF-8 id, u32 crop count
        per crop:
            4 * f32 bbox (x, y, w, h)
            u8 horizontal flip, u8 status (0 unset, 1 UR, 2 HR, 3 IR)
            u16 ground-truth class (0xFFFF when absent)
            top_k * (u32 class index, u16 level), indices ascending

Calibrated labels are not stored; they are rebuilt here exactly as the
producer rebuilds them, so the floats compare equal across readers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, MagicError, TruncationError, VersionError

MAGIC = b"FERK"
VERSION = 1
GT_MISSING = 0xFFFF
STATUS_NAMES = {1: "UR", 2: "HR", 3: "IR"}

_GEOM_TOL = 1e-6
_MASS_TOL = 1e-6

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_DIMS = struct.Struct("<IHH")
_SAMPLER = struct.Struct("<dddddHQ")
_CALIB = struct.Struct("<dddd")
_CROP_FIXED = struct.Struct("<ffffBBH")
_PAIR = struct.Struct("<IH")


@dataclass(frozen=True)
class StoreHeader:
    """Everything before the first image block."""

    num_classes: int
    top_k: int
    bits: int
    sampler: tuple[float, float, float, float, float, int, int]
    calibration: tuple[float, float, float, float] | None
    num_images: int

    @property
    def is_calibrated(self) -> bool:
        return self.calibration is not None


@dataclass(frozen=True)
class ClientRecord:
    """One crop with its quantized label, mirroring the producer's record.

    ``calibrated`` is the rebuilt training target at full dimension: a
    smoothed one-hot for HR, the dequantized distribution for IR, None for
    UR and for uncalibrated stores.  Streamed records (see ``stream``)
    also leave it None because the wire protocol does not carry the
    calibration settings.
    """

    image_id: str
    bbox: tuple[float, float, float, float]
    hflip: bool
    status: str | None
    gt_class: int | None
    entries: tuple[tuple[int, int], ...]
    calibrated: tuple[float, ...] | None

    def max_level_prob(self, bits: int) -> float:
        full = (1 << bits) - 1
        return max(level for _, level in self.entries) / full


def recover_full(entries, num_classes: int, bits: int) -> tuple[float, ...]:
    """Expand a sparse quantized label to a dense probability tuple.

    Residual mass (1 minus the stored mass) spreads uniformly over the
    absent classes; a negative residual renormalizes the stored entries
    instead.  The arithmetic mirrors the producer's recovery step for
    step, so the resulting floats are identical, not merely close.
    """
    full = (1 << bits) - 1
    k = len(entries)
    dense = [0.0] * num_classes
    inv = 1.0 / float(full)
    mass = 0.0
    for cls, level in entries:
        d = float(level) * inv
        dense[cls] = d
        mass += d
    residual = 1.0 - mass
    if num_classes > k:
        if residual >= 0.0:
            fill = residual / float(num_classes - k)
            present = {cls for cls, _ in entries}
            for i in range(num_classes):
                if i not in present:
                    dense[i] = fill
        elif mass > 0.0:
            dense = [d / mass for d in dense]
    else:
        if mass > 0.0:
            dense = [d / mass for d in dense]
        else:
            dense = [1.0 / num_classes] * num_classes
    return tuple(dense)


def smooth_full(gt_class: int, epsilon: float, num_classes: int) -> tuple[float, ...]:
    """Smoothed one-hot: 1 - epsilon at the true class, the rest uniform."""
    base = epsilon / (num_classes - 1)
    dense = [base] * num_classes
    dense[gt_class] = 1.0 - epsilon
    return tuple(dense)


class _Cursor:
    """Bounds-checked forward reader over a byte buffer."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise TruncationError(f"ran out of bytes reading {what}", offset=self.pos)
        start = self.pos
        self.pos = end
        return self.buf[start:end]

    def unpack(self, st: struct.Struct, what: str) -> tuple:
        return st.unpack(self.take(st.size, what))


def _parse_crop(cur: _Cursor, image_id: str, header: StoreHeader) -> ClientRecord:
    at = cur.pos
    x, y, w, h, flip, status_byte, gt_raw = cur.unpack(_CROP_FIXED, "crop")
    if min(x, y, w, h) < 0.0 or x + w > 1.0 + _GEOM_TOL or y + h > 1.0 + _GEOM_TOL:
        raise FormatError(f"crop box ({x}, {y}, {w}, {h}) outside the unit square", offset=at)
    if flip not in (0, 1):
        raise FormatError(f"flip byte must be 0 or 1, got {flip}", offset=at)
    if status_byte not in (0, 1, 2, 3):
        raise FormatError(f"unknown status byte {status_byte}", offset=at)
    if header.is_calibrated and status_byte == 0:
        raise FormatError("calibrated store with an unclassified crop", offset=at)
    if not header.is_calibrated and status_byte != 0:
        raise FormatError("status set in an uncalibrated store", offset=at)

    gt = None if gt_raw == GT_MISSING else gt_raw
    if gt is not None and gt >= header.num_classes:
        raise FormatError(
            f"ground truth {gt} >= num_classes {header.num_classes}", offset=at
        )
    status = STATUS_NAMES.get(status_byte)
    if status == "HR" and gt is None:
        raise FormatError("HR crop without a ground-truth class", offset=at)

    full = (1 << header.bits) - 1
    entries = []
    prev = -1
    level_sum = 0
    for _ in range(header.top_k):
        pair_at = cur.pos
        cls, level = cur.unpack(_PAIR, "label entry")
        if cls <= prev:
            raise FormatError("label class indices must be strictly increasing", offset=pair_at)
        if cls >= header.num_classes:
            raise FormatError(
                f"label class {cls} >= num_classes {header.num_classes}", offset=pair_at
            )
        if level > full:
            raise FormatError(f"level {level} outside [0, {full}]", offset=pair_at)
        prev = cls
        level_sum += level
        entries.append((cls, level))
    if level_sum / full > 1.0 + _MASS_TOL:
        raise FormatError(f"dequantized mass {level_sum / full} exceeds 1", offset=at)

    calibrated = None
    if header.is_calibrated:
        epsilon = header.calibration[3]
        if status == "HR":
            calibrated = smooth_full(gt, epsilon, header.num_classes)
        elif status == "IR":
            calibrated = recover_full(entries, header.num_classes, header.bits)
    return ClientRecord(
        image_id=image_id,
        bbox=(x, y, w, h),
        hflip=bool(flip),
        status=status,
        gt_class=gt,
        entries=tuple(entries),
        calibrated=calibrated,
    )


def parse_store(buf: bytes) -> tuple[StoreHeader, list[ClientRecord]]:
    """Parse a complete store image; returns the header and file-order records."""
    cur = _Cursor(buf)
    magic = cur.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    at = cur.pos
    (version,) = cur.unpack(_U16, "version")
    if version != VERSION:
        raise VersionError(f"unsupported store version {version}", offset=at)

    at = cur.pos
    num_classes, top_k, bits = cur.unpack(_DIMS, "dimensions")
    if num_classes < 2 or not 1 <= top_k <= num_classes or not 1 <= bits <= 16:
        raise FormatError(
            f"bad dimensions: classes={num_classes} top_k={top_k} bits={bits}", offset=at
        )

    at = cur.pos
    sampler = cur.unpack(_SAMPLER, "sampler settings")
    smin, smax, rmin, rmax, flip_p, attempts, _seed = sampler
    if not (
        0.0 < smin <= smax <= 1.0
        and 0.0 < rmin <= rmax
        and 0.0 <= flip_p <= 1.0
        and attempts >= 1
    ):
        raise FormatError("sampler settings out of range", offset=at)

    at = cur.pos
    flag = cur.take(1, "calibration flag")[0]
    if flag not in (0, 1):
        raise FormatError(f"calibration flag must be 0 or 1, got {flag}", offset=at)
    calibration = None
    if flag:
        at = cur.pos
        calibration = cur.unpack(_CALIB, "calibration settings")
        t_low, t_mid, t_top, epsilon = calibration
        if not (0.0 <= t_low < t_mid < t_top <= 1.0 and 0.0 < epsilon < 1.0):
            raise FormatError("calibration settings out of range", offset=at)

    (num_images,) = cur.unpack(_U32, "image count")
    header = StoreHeader(
        num_classes=num_classes,
        top_k=top_k,
        bits=bits,
        sampler=sampler,
        calibration=calibration,
        num_images=num_images,
    )

    records: list[ClientRecord] = []
    prev_id = None
    for _ in range(num_images):
        at = cur.pos
        (idlen,) = cur.unpack(_U16, "image id length")
        if idlen == 0:
            raise FormatError("empty image id", offset=at)
        raw_id = cur.take(idlen, "image id")
        try:
            image_id = raw_id.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"image id is not UTF-8: {raw_id!r}", offset=at) from None
        if prev_id is not None and image_id <= prev_id:
            raise FormatError(
                f"image ids out of order: {image_id!r} after {prev_id!r}", offset=at
            )
        prev_id = image_id
        (ncrops,) = cur.unpack(_U32, "crop count")
        for _ in range(ncrops):
            records.append(_parse_crop(cur, image_id, header))
    if cur.pos != len(buf):
        raise FormatError(f"{len(buf) - cur.pos} trailing bytes", offset=cur.pos)
    return header, records


def open_store(path) -> list[ClientRecord]:
    """Read a label-store file; returns its records in file order."""
    _header, records = parse_store(Path(path).read_bytes())
    return records


def read_header(path) -> StoreHeader:
    """Parse a store file and return just its header."""
    header, _records = parse_store(Path(path).read_bytes())
    return header
