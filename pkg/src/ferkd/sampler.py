"""Seeded region sampling and sampling-order policies.

``sample_crop`` reproduces the usual random-resized-crop geometry (random
area fraction, log-uniform aspect, rejection sampling with a centered
fallback) on top of the portable RNG, so a (config, seed) pair pins the
exact crop set on any platform.  ``order_records`` turns a crop population
into a training order: plain shuffle, easy-to-hard / hard-to-easy staged by
teacher confidence, or a shuffle of the surviving records only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import _kernels
from .errors import EmptyInputError, ParameterError, StateError
from .rng import Stream, derive

if TYPE_CHECKING:
    from .calibrate import CropRecord

_GEOM_TOL = 1e-6


def _f32(x: float) -> float:
    # Normalized coordinates are stored as f32 on disk; round at creation so
    # a written-then-read box equals the in-memory one exactly.
    return float(np.float32(x))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized image coordinates.

    Extents may be zero (degenerate paste boxes); sampled crops are always
    strictly positive.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 0 or self.h < 0:
            raise ParameterError(f"negative bbox field in {self}")
        if self.x + self.w > 1.0 + _GEOM_TOL or self.y + self.h > 1.0 + _GEOM_TOL:
            raise ParameterError(f"bbox {self} exceeds the unit square")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass(frozen=True)
class SamplerConfig:
    """Crop geometry bounds; defaults: area in [0.08, 1], aspect in [3/4, 4/3]."""

    scale_min: float = 0.08
    scale_max: float = 1.0
    ratio_min: float = 3.0 / 4.0
    ratio_max: float = 4.0 / 3.0
    hflip_prob: float = 0.5
    max_attempts: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.scale_min <= self.scale_max <= 1:
            raise ParameterError(f"need 0 < scale_min <= scale_max <= 1, got {self}")
        if not 0 < self.ratio_min <= self.ratio_max:
            raise ParameterError(f"need 0 < ratio_min <= ratio_max, got {self}")
        if not 0 <= self.hflip_prob <= 1:
            raise ParameterError(f"hflip_prob outside [0, 1]: {self.hflip_prob}")
        if self.max_attempts < 1:
            raise ParameterError(f"max_attempts must be >= 1, got {self.max_attempts}")


class OrderMode(enum.Enum):
    RANDOM = "random"
    EASY_TO_HARD = "easy_to_hard"
    HARD_TO_EASY = "hard_to_easy"
    SURGICAL = "surgical"


@dataclass(frozen=True)
class OrderPolicy:
    """How an epoch's records are sequenced; ``chunk`` is the stage width for
    the confidence-sorted modes (records shuffle freely within a stage)."""

    mode: OrderMode = OrderMode.RANDOM
    chunk: int = 1

    def __post_init__(self):
        if self.chunk < 1:
            raise ParameterError(f"chunk must be >= 1, got {self.chunk}")


def sample_crop(
    image_w: int, image_h: int, cfg: SamplerConfig, stream: Stream
) -> tuple[BBox, bool]:
    """Draw one crop box and flip flag, advancing ``stream``.

    Per attempt two uniforms are consumed (area fraction, log-aspect), two
    bounded ints on acceptance (x, y), and always one final uniform for the
    flip decision.
    """
    if image_w < 2 or image_h < 2:
        raise ParameterError(f"image must be at least 2x2, got {image_w}x{image_h}")
    state, x, y, w, h = _kernels.sample_crop_px(
        image_w,
        image_h,
        cfg.scale_min,
        cfg.scale_max,
        cfg.ratio_min,
        cfg.ratio_max,
        cfg.max_attempts,
        stream.state,
    )
    stream.state = state
    flip = stream.next_double() < cfg.hflip_prob
    bbox = BBox(
        x=_f32(x / image_w), y=_f32(y / image_h), w=_f32(w / image_w), h=_f32(h / image_h)
    )
    return bbox, flip


def sample_crops(
    image_w: int, image_h: int, n: int, cfg: SamplerConfig, stream: Stream | None = None
) -> list[tuple[BBox, bool]]:
    """``n`` independent draws from one stream (fresh from cfg.seed if None)."""
    if n < 1:
        raise ParameterError(f"need n >= 1 crops, got {n}")
    if stream is None:
        stream = Stream(cfg.seed)
    return [sample_crop(image_w, image_h, cfg, stream) for _ in range(n)]


def pixel_box(bbox: BBox, image_w: int, image_h: int) -> tuple[int, int, int, int]:
    """Map a normalized box back to integer pixels: (x0, y0, x1, y1)."""
    x0 = int(round(bbox.x * image_w))
    y0 = int(round(bbox.y * image_h))
    x1 = int(round((bbox.x + bbox.w) * image_w))
    y1 = int(round((bbox.y + bbox.h) * image_h))
    return x0, y0, min(x1, image_w), min(y1, image_h)


def order_records(
    records: Sequence["CropRecord"], policy: OrderPolicy, epoch_seed: int
) -> list[int]:
    """Index permutation of ``records`` for one epoch under ``policy``.

    Difficulty is the teacher's max probability of the recovered soft label:
    high is easy.  SURGICAL shuffles only records that calibration kept and
    requires calibrated input.
    """
    if not records:
        raise EmptyInputError("order_records needs at least one record")
    stream = Stream(derive(epoch_seed, "order"))
    if policy.mode is OrderMode.RANDOM:
        return stream.permutation(len(records))
    if policy.mode is OrderMode.SURGICAL:
        from .calibrate import CropStatus

        if any(r.status is None for r in records):
            raise StateError("surgical ordering needs calibrated records")
        kept = [i for i, r in enumerate(records) if r.status is not CropStatus.UR]
        stream.shuffle(kept)
        return kept

    maxp = [r.teacher_max_prob() for r in records]
    descending = policy.mode is OrderMode.EASY_TO_HARD
    key = sorted(range(len(records)), key=lambda i: (-maxp[i] if descending else maxp[i], i))
    for start in range(0, len(key), policy.chunk):
        stage = key[start : start + policy.chunk]
        stream.shuffle(stage)
        key[start : start + policy.chunk] = stage
    return key


def center_distance(bbox: BBox) -> float:
    """Distance from the box center to the image center, normalized units."""
    cx, cy = bbox.center
    return math.hypot(cx - 0.5, cy - 0.5)
