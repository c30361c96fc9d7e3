"""Surgical label calibration: partition crops by teacher confidence.

Each crop's recovered soft label is scored by its max probability and the
crop is sorted into one of three buckets:

* UR (uninformative): confidence below t_low or above t_top; the crop is
  dropped from training but kept in the store so the decision is reversible.
* HR (hard): confidence in [t_low, t_mid); the soft label is judged
  unreliable and replaced by the smoothed ground-truth class.
* IR (important): confidence in [t_mid, t_top]; the soft label is kept.

Lower bounds are inclusive throughout, so exactly one bucket matches any
confidence in [0, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import DataError, EmptyInputError, ParameterError
from .labels import (
    BinStats,
    HardLabel,
    QuantizedSoftLabel,
    SoftLabel,
    bin_statistics_from_values,
    max_prob,
    recover,
)
from .sampler import BBox

if TYPE_CHECKING:
    from .store import LabelStore


@dataclass(frozen=True)
class CalibrationConfig:
    """Bucket thresholds and the smoothing value for relabeled hard crops."""

    t_low: float = 0.15
    t_mid: float = 0.30
    t_top: float = 0.95
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.t_low < self.t_mid < self.t_top <= 1.0:
            raise ParameterError(
                f"need 0 <= t_low < t_mid < t_top <= 1, got "
                f"({self.t_low}, {self.t_mid}, {self.t_top})"
            )
        if not 0.0 < self.epsilon < 1.0:
            raise ParameterError(f"epsilon must be in (0, 1), got {self.epsilon}")


class CropStatus(enum.IntEnum):
    """Calibration verdict; values double as the on-disk encoding (0 = none)."""

    UR = 1
    HR = 2
    IR = 3


@dataclass(frozen=True)
class CropRecord:
    """One sampled region with its teacher label and calibration outcome.

    ``status``/``calibrated_label`` are None until the record passes through
    calibration; afterwards HR records carry the smoothed ground truth, IR
    records the recovered soft label, and UR records no label at all.
    """

    image_id: str
    bbox: BBox
    hflip: bool
    soft_label: QuantizedSoftLabel
    gt_class: Optional[HardLabel]
    status: Optional[CropStatus] = None
    calibrated_label: Optional[SoftLabel] = None

    def recovered(self) -> SoftLabel:
        return recover(self.soft_label)

    def teacher_max_prob(self) -> float:
        return max_prob(self.recovered())

    @property
    def is_calibrated(self) -> bool:
        return self.status is not None

    def key(self) -> tuple[str, float, float, float, float, bool]:
        """Alignment key shared by the same crop across teacher stores."""
        b = self.bbox
        return (self.image_id, b.x, b.y, b.w, b.h, self.hflip)


def classify(max_p: float, cfg: CalibrationConfig) -> CropStatus:
    """Bucket a confidence value; see the module docstring for the ranges."""
    if not 0.0 <= max_p <= 1.0:
        raise ParameterError(f"max_p must be in [0, 1], got {max_p}")
    if max_p < cfg.t_low or max_p > cfg.t_top:
        return CropStatus.UR
    if max_p < cfg.t_mid:
        return CropStatus.HR
    return CropStatus.IR


def smooth_hard(gt_class: int, epsilon: float, num_classes: int) -> SoftLabel:
    """Smoothed one-hot: 1 - epsilon at the true class, the rest uniform."""
    if num_classes < 2:
        raise ParameterError(f"smoothing needs >= 2 classes, got {num_classes}")
    if not 0.0 <= epsilon < 1.0:
        raise ParameterError(f"epsilon must be in [0, 1), got {epsilon}")
    if not 0 <= gt_class < num_classes:
        raise ParameterError(f"gt_class {gt_class} outside [0, {num_classes})")
    probs = np.full(num_classes, epsilon / (num_classes - 1))
    probs[gt_class] = 1.0 - epsilon
    return SoftLabel(probs)


def calibrate_record(rec: CropRecord, cfg: CalibrationConfig) -> CropRecord:
    """Fill ``status`` and ``calibrated_label``; applying twice is a no-op."""
    recovered = rec.recovered()
    status = classify(max_prob(recovered), cfg)
    if status is CropStatus.UR:
        label = None
    elif status is CropStatus.HR:
        if rec.gt_class is None:
            raise DataError(
                f"crop of image {rec.image_id!r} is a hard region but has no ground truth"
            )
        label = smooth_hard(rec.gt_class.class_index, cfg.epsilon, rec.soft_label.num_classes)
    else:
        label = recovered
    return replace(rec, status=status, calibrated_label=label)


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome counts plus the confidence histogram of the whole store."""

    counts: dict[CropStatus, int]
    total: int
    bins: BinStats

    @property
    def discard_fraction(self) -> float:
        return self.counts.get(CropStatus.UR, 0) / self.total


def calibrate_store(store: "LabelStore", cfg: CalibrationConfig):
    """Calibrate every record; returns (new store, report).

    The input store is not modified.  Discarded records stay in the output
    with status UR so threshold sweeps never need to regenerate labels.
    """
    records = [r for recs in store.entries.values() for r in recs]
    if not records:
        raise EmptyInputError("cannot calibrate an empty store")
    new_entries = {}
    counts = {status: 0 for status in CropStatus}
    max_ps = []
    for image_id, recs in store.entries.items():
        out = []
        for rec in recs:
            cal = calibrate_record(rec, cfg)
            counts[cal.status] += 1
            max_ps.append(max_prob(rec.recovered()))
            out.append(cal)
        new_entries[image_id] = tuple(out)
    report = CalibrationReport(
        counts=counts, total=len(records), bins=bin_statistics_from_values(max_ps)
    )
    return replace(store, entries=new_entries, calibration=cfg), report
