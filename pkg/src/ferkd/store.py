"""On-disk container for quantized crop labels.

One file holds every crop of a dataset pass: the crop geometry, the
quantized teacher distribution, optional ground truth, and (once
calibration has run) the per-crop region status.  The format is fixed
little-endian binary so independent readers can consume it without this
package.

Layout, all little-endian::

    magic   4s   "FERK"
    version u16  currently 1
    C       u32  number of classes
    K       u16  stored entries per crop
    B       u16  quantization bits
    sampler 5*f64 scale_min scale_max ratio_min ratio_max hflip_prob
            u16  max_attempts
            u64  seed
    calib   u8   0 = absent, 1 = present
            (4*f64 t_low t_mid t_top epsilon, when present)
    images  u32  image count
    per image:
            u16  id byte length, then that many UTF-8 bytes
            u32  crop count
    per crop:
            4*f32 bbox x y w h            (unit square, f32-exact)
            u8    horizontal flip (0/1)
            u8    status (0 none, 1 discard, 2 hard, 3 informative)
            u16   ground-truth class, 0xFFFF when missing
            K * (u32 class index, u16 level)

Images are written in sorted-id order, so equal stores serialize to equal
bytes.  Statuses are all-or-nothing: a store either carries a calibration
block and a status on every crop, or neither.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .calibrate import CalibrationConfig, CropRecord, CropStatus, smooth_hard
from .errors import (
    IngestError,
    MagicError,
    ParameterError,
    ShapeError,
    StoreFormatError,
    StoreInvariantError,
    TruncationError,
    VersionError,
)
from .labels import HardLabel, QuantizedSoftLabel, SoftLabel, quantize, recover
from .sampler import BBox, SamplerConfig

MAGIC = b"FERK"
VERSION = 1
_GT_MISSING = 0xFFFF

_HEADER = struct.Struct("<IHH")
_SAMPLER = struct.Struct("<dddddHQ")
_CALIB = struct.Struct("<dddd")
_IMAGE_HEAD = struct.Struct("<H")
_CROP_COUNT = struct.Struct("<I")
_CROP_FIXED = struct.Struct("<ffffBBH")
_PAIR = struct.Struct("<IH")

_STATUS_TO_BYTE = {None: 0, CropStatus.UR: 1, CropStatus.HR: 2, CropStatus.IR: 3}
_BYTE_TO_STATUS = {v: k for k, v in _STATUS_TO_BYTE.items()}


@dataclass(frozen=True)
class LabelStore:
    """All crop records of one dataset pass, grouped by image id."""

    num_classes: int
    top_k: int
    bits: int
    entries: Mapping[str, tuple[CropRecord, ...]]
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    calibration: CalibrationConfig | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {self.num_classes}")
        if not 1 <= self.top_k <= self.num_classes:
            raise ParameterError(
                f"top_k must be in [1, {self.num_classes}], got {self.top_k}"
            )
        if not 1 <= self.bits <= 16:
            raise ParameterError(f"bits must be in [1, 16], got {self.bits}")
        normalized = {}
        for image_id, recs in self.entries.items():
            if not image_id:
                raise StoreInvariantError("empty image id")
            if len(image_id.encode("utf-8")) > 0xFFFF:
                raise StoreInvariantError(f"image id too long: {image_id[:32]!r}...")
            normalized[image_id] = tuple(recs)
        object.__setattr__(self, "entries", normalized)
        for image_id, recs in normalized.items():
            for i, rec in enumerate(recs):
                where = f"image {image_id!r} crop {i}"
                if rec.image_id != image_id:
                    raise StoreInvariantError(
                        f"{where}: record is tagged {rec.image_id!r}"
                    )
                q = rec.soft_label
                if q.num_classes != self.num_classes:
                    raise StoreInvariantError(
                        f"{where}: label over {q.num_classes} classes, store has {self.num_classes}"
                    )
                if q.bits != self.bits:
                    raise StoreInvariantError(
                        f"{where}: label uses {q.bits} bits, store uses {self.bits}"
                    )
                if q.top_k != self.top_k:
                    raise StoreInvariantError(
                        f"{where}: label has {q.top_k} entries, store stores {self.top_k}"
                    )
                if rec.gt_class is not None and rec.gt_class.num_classes != self.num_classes:
                    raise StoreInvariantError(f"{where}: ground truth class dimension differs")
                if self.calibration is None and rec.status is not None:
                    raise StoreInvariantError(
                        f"{where}: status set on a store without calibration"
                    )
                if self.calibration is not None and rec.status is None:
                    raise StoreInvariantError(
                        f"{where}: calibrated store has an unclassified crop"
                    )

    @property
    def num_images(self) -> int:
        return len(self.entries)

    @property
    def num_crops(self) -> int:
        return sum(len(v) for v in self.entries.values())

    @property
    def is_calibrated(self) -> bool:
        return self.calibration is not None

    def records(self) -> Iterator[CropRecord]:
        """Every record, images in sorted-id order."""
        for image_id in sorted(self.entries):
            yield from self.entries[image_id]

    def status_counts(self) -> dict[str, int]:
        counts = {"none": 0, "UR": 0, "HR": 0, "IR": 0}
        for rec in self.records():
            counts[rec.status.name if rec.status is not None else "none"] += 1
        return counts


def to_bytes(store: LabelStore) -> bytes:
    """Serialize to the canonical byte layout (images sorted by id)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += _HEADER.pack(store.num_classes, store.top_k, store.bits)
    s = store.sampler
    out += _SAMPLER.pack(
        s.scale_min, s.scale_max, s.ratio_min, s.ratio_max,
        s.hflip_prob, s.max_attempts, s.seed,
    )
    if store.calibration is None:
        out += b"\x00"
    else:
        c = store.calibration
        out += b"\x01"
        out += _CALIB.pack(c.t_low, c.t_mid, c.t_top, c.epsilon)
    out += _CROP_COUNT.pack(store.num_images)
    for image_id in sorted(store.entries):
        raw_id = image_id.encode("utf-8")
        out += _IMAGE_HEAD.pack(len(raw_id))
        out += raw_id
        recs = store.entries[image_id]
        out += _CROP_COUNT.pack(len(recs))
        for rec in recs:
            b = rec.bbox
            gt = _GT_MISSING if rec.gt_class is None else rec.gt_class.class_index
            out += _CROP_FIXED.pack(
                b.x, b.y, b.w, b.h, int(rec.hflip), _STATUS_TO_BYTE[rec.status], gt
            )
            for cls_idx, level in rec.soft_label.entries:
                out += _PAIR.pack(cls_idx, level)
    return bytes(out)


class _Reader:
    """Cursor over a byte buffer that reports the offset of any defect."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, st: struct.Struct) -> tuple:
        if self.pos + st.size > len(self.buf):
            raise TruncationError(
                f"need {st.size} bytes, {len(self.buf) - self.pos} left", offset=self.pos
            )
        vals = st.unpack_from(self.buf, self.pos)
        self.pos += st.size
        return vals

    def take_raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(
                f"need {n} bytes, {len(self.buf) - self.pos} left", offset=self.pos
            )
        raw = self.buf[self.pos : self.pos + n]
        self.pos += n
        return raw


def from_bytes(buf: bytes) -> LabelStore:
    """Parse a serialized store, reporting the byte offset of any defect.

    Region statuses are restored from the status byte; the calibrated
    target of each kept crop is rebuilt from the stored data (it is fully
    determined by the status, the label, and the calibration block, so it
    is never written to disk).
    """
    r = _Reader(buf)
    at = r.pos
    if r.take_raw(4) != MAGIC:
        raise MagicError(f"bad magic {buf[:4]!r}", offset=at)
    at = r.pos
    (version,) = r.take(struct.Struct("<H"))
    if version != VERSION:
        raise VersionError(f"unsupported version {version}", offset=at)
    at = r.pos
    num_classes, top_k, bits = r.take(_HEADER)
    try:
        sampler = SamplerConfig(*r.take(_SAMPLER))
    except ParameterError as exc:
        raise StoreFormatError(str(exc), offset=at) from exc
    at = r.pos
    (has_calib,) = r.take(struct.Struct("<B"))
    if has_calib > 1:
        raise StoreFormatError(f"calibration flag must be 0 or 1, got {has_calib}", offset=at)
    calibration = None
    if has_calib:
        at = r.pos
        try:
            calibration = CalibrationConfig(*r.take(_CALIB))
        except ParameterError as exc:
            raise StoreFormatError(str(exc), offset=at) from exc
    (num_images,) = r.take(_CROP_COUNT)
    entries: dict[str, tuple[CropRecord, ...]] = {}
    for _ in range(num_images):
        at = r.pos
        (id_len,) = r.take(_IMAGE_HEAD)
        try:
            image_id = r.take_raw(id_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreFormatError(f"image id is not UTF-8: {exc}", offset=at) from exc
        if not image_id:
            raise StoreFormatError("empty image id", offset=at)
        if image_id in entries:
            raise StoreFormatError(f"duplicate image id {image_id!r}", offset=at)
        (n_crops,) = r.take(_CROP_COUNT)
        recs = []
        for crop_i in range(n_crops):
            at = r.pos
            x, y, w, h, flip, status_byte, gt = r.take(_CROP_FIXED)
            if flip > 1:
                raise StoreFormatError(f"flip byte must be 0 or 1, got {flip}", offset=at)
            if status_byte not in _BYTE_TO_STATUS:
                raise StoreFormatError(f"unknown status byte {status_byte}", offset=at)
            try:
                bbox = BBox(x, y, w, h)
            except ParameterError as exc:
                raise StoreFormatError(
                    f"image {image_id!r} crop {crop_i}: {exc}", offset=at
                ) from exc
            pairs = []
            for _k in range(top_k):
                at = r.pos
                cls_idx, level = r.take(_PAIR)
                pairs.append((cls_idx, level))
            try:
                q = QuantizedSoftLabel(tuple(pairs), num_classes=num_classes, bits=bits)
            except ParameterError as exc:
                raise StoreFormatError(
                    f"image {image_id!r} crop {crop_i}: {exc}", offset=at
                ) from exc
            gt_class = None
            if gt != _GT_MISSING:
                if gt >= num_classes:
                    raise StoreFormatError(
                        f"ground truth class {gt} >= num_classes {num_classes}", offset=at
                    )
                gt_class = HardLabel(gt, num_classes)
            status = _BYTE_TO_STATUS[status_byte]
            calibrated = None
            if status is CropStatus.HR:
                if gt_class is None:
                    raise StoreFormatError(
                        f"image {image_id!r} crop {crop_i}: hard-region crop without ground truth",
                        offset=at,
                    )
                calibrated = smooth_hard(gt_class.class_index, calibration.epsilon, num_classes)
            elif status is CropStatus.IR:
                calibrated = recover(q)
            recs.append(
                CropRecord(
                    image_id=image_id,
                    bbox=bbox,
                    hflip=bool(flip),
                    soft_label=q,
                    gt_class=gt_class,
                    status=status,
                    calibrated_label=calibrated,
                )
            )
        entries[image_id] = tuple(recs)
    if r.pos != len(buf):
        raise StoreFormatError(
            f"{len(buf) - r.pos} trailing bytes after the last record", offset=r.pos
        )
    try:
        return LabelStore(
            num_classes=num_classes,
            top_k=top_k,
            bits=bits,
            entries=entries,
            sampler=sampler,
            calibration=calibration,
        )
    except (ParameterError, StoreInvariantError) as exc:
        raise StoreFormatError(str(exc), offset=0) from exc


def write_store(store: LabelStore, path) -> int:
    """Write the canonical serialization to ``path``; returns bytes written."""
    data = to_bytes(store)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_store(path) -> LabelStore:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def _f32(x: float) -> float:
    return float(np.float32(x))


def ingest_predictions(
    lines: Iterable[str],
    num_classes: int,
    top_k: int = 10,
    bits: int = 8,
    sampler: SamplerConfig | None = None,
) -> LabelStore:
    """Build an uncalibrated store from line-oriented teacher output.

    Each non-blank, non-``#`` line describes one crop::

        image_id x y w h flip gt class:prob [class:prob ...]

    with the crop box in unit coordinates, ``flip`` 0 or 1, ``gt`` an
    integer class or ``-`` when unknown, and at least one ``class:prob``
    pair.  Probability mass not covered by the listed pairs is spread
    uniformly over the remaining classes before quantization, mirroring
    how sparse labels are recovered.  Duplicate crops (same image, box,
    and flip) are rejected: they would make later teacher alignment
    ambiguous.
    """
    if sampler is None:
        sampler = SamplerConfig()
    entries: dict[str, list[CropRecord]] = {}
    seen_keys = set()
    for line_no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) < 8:
            raise IngestError(
                f"expected at least 8 fields, got {len(parts)}", line_no=line_no
            )
        image_id = parts[0]
        try:
            coords = [float(p) for p in parts[1:5]]
        except ValueError as exc:
            raise IngestError(f"bad crop coordinate: {exc}", line_no=line_no) from exc
        try:
            bbox = BBox(*(_f32(c) for c in coords))
        except ParameterError as exc:
            raise IngestError(str(exc), line_no=line_no) from exc
        if parts[5] not in ("0", "1"):
            raise IngestError(f"flip must be 0 or 1, got {parts[5]!r}", line_no=line_no)
        hflip = parts[5] == "1"
        gt_class = None
        if parts[6] != "-":
            try:
                gt = int(parts[6])
            except ValueError as exc:
                raise IngestError(f"bad ground truth field {parts[6]!r}", line_no=line_no) from exc
            if not 0 <= gt < num_classes:
                raise IngestError(
                    f"ground truth class {gt} outside [0, {num_classes})", line_no=line_no
                )
            gt_class = HardLabel(gt, num_classes)
        dense = np.zeros(num_classes, dtype=np.float64)
        listed = set()
        for tok in parts[7:]:
            cls_txt, sep, prob_txt = tok.partition(":")
            if not sep:
                raise IngestError(f"expected class:prob, got {tok!r}", line_no=line_no)
            try:
                cls_idx = int(cls_txt)
                prob = float(prob_txt)
            except ValueError as exc:
                raise IngestError(f"bad pair {tok!r}: {exc}", line_no=line_no) from exc
            if not 0 <= cls_idx < num_classes:
                raise IngestError(
                    f"class {cls_idx} outside [0, {num_classes})", line_no=line_no
                )
            if cls_idx in listed:
                raise IngestError(f"class {cls_idx} listed twice", line_no=line_no)
            if not np.isfinite(prob) or prob < 0.0 or prob > 1.0:
                raise IngestError(f"probability {prob!r} outside [0, 1]", line_no=line_no)
            listed.add(cls_idx)
            dense[cls_idx] = prob
        total = float(dense.sum())
        if total > 1.0 + 1e-6:
            raise IngestError(f"probabilities sum to {total:.6f} > 1", line_no=line_no)
        absent = num_classes - len(listed)
        if absent > 0:
            fill = max(0.0, 1.0 - total) / absent
            mask = np.ones(num_classes, dtype=bool)
            mask[list(listed)] = False
            dense[mask] = fill
        elif total > 0.0:
            dense /= total
        else:
            dense[:] = 1.0 / num_classes
        try:
            label = quantize(SoftLabel(dense), top_k, bits)
        except (ParameterError, ShapeError) as exc:
            raise IngestError(str(exc), line_no=line_no) from exc
        rec = CropRecord(
            image_id=image_id,
            bbox=bbox,
            hflip=hflip,
            soft_label=label,
            gt_class=gt_class,
        )
        if rec.key() in seen_keys:
            raise IngestError(f"duplicate crop {rec.key()}", line_no=line_no)
        seen_keys.add(rec.key())
        entries.setdefault(image_id, []).append(rec)
    if not entries:
        raise IngestError("no crop lines found", line_no=0)
    return LabelStore(
        num_classes=num_classes,
        top_k=top_k,
        bits=bits,
        entries={k: tuple(v) for k, v in entries.items()},
        sampler=sampler,
    )


def summary(store: LabelStore) -> dict:
    """Compact description of a store for status output."""
    return {
        "num_classes": store.num_classes,
        "top_k": store.top_k,
        "bits": store.bits,
        "num_images": store.num_images,
        "num_crops": store.num_crops,
        "calibrated": store.is_calibrated,
        "status_counts": store.status_counts(),
    }
