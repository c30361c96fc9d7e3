"""Multi-teacher label combination.

Quantized labels from each teacher are recovered to full dimension,
calibrated independently, and merged per crop: a configurable vote decides
whether the crop is discarded outright, the surviving teachers' hard/soft
verdicts resolve by majority (ties keep the soft label, which preserves
more information), and soft targets are averaged elementwise.  Teachers are
always processed in sorted-id order so the result is independent of how the
set was assembled.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .calibrate import CalibrationConfig, CropRecord, CropStatus, classify, smooth_hard
from .errors import AlignmentError, EmptyInputError, ParameterError, ShapeError
from .labels import SoftLabel, max_prob, quantize, recover
from .store import LabelStore

VOTE_MODES = ("any", "majority", "all")
LABEL_POLICIES = ("ir_only", "calibrated_mean")


@dataclass(frozen=True)
class TeacherSet:
    """Aligned label stores from several teachers over one crop population."""

    stores: Mapping[str, LabelStore]

    def __post_init__(self):
        if not self.stores:
            raise EmptyInputError("teacher set needs at least one store")
        ids = self.teacher_ids
        first = self.stores[ids[0]]
        bad = []
        for tid in ids[1:]:
            other = self.stores[tid]
            if other.num_classes != first.num_classes:
                raise ShapeError(
                    f"teacher {tid!r} has {other.num_classes} classes, "
                    f"expected {first.num_classes}"
                )
            if set(other.entries) != set(first.entries):
                missing = set(first.entries) ^ set(other.entries)
                bad.extend((img, f"image set differs for teacher {tid!r}") for img in sorted(missing))
                continue
            for img, recs in first.entries.items():
                theirs = other.entries[img]
                if len(theirs) != len(recs):
                    bad.append((img, f"crop count differs for teacher {tid!r}"))
                    continue
                for i, (a, b) in enumerate(zip(recs, theirs)):
                    if a.key() != b.key():
                        bad.append((img, i))
        if bad:
            raise AlignmentError(
                f"teacher stores are misaligned on {len(bad)} crops", crops=bad
            )

    @property
    def teacher_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.stores))

    @property
    def num_teachers(self) -> int:
        return len(self.stores)


def ensemble_labels(labels: Sequence[SoftLabel]) -> SoftLabel:
    """Elementwise mean of the given distributions.

    Each class column is sorted before summing, so the float result is
    bit-identical no matter how the teacher list was ordered.
    """
    if not labels:
        raise EmptyInputError("ensemble_labels needs at least one label")
    c = labels[0].num_classes
    for lab in labels[1:]:
        if lab.num_classes != c:
            raise ShapeError(f"label sizes differ: {lab.num_classes} vs {c}")
    stacked = np.stack([lab.probs for lab in labels])
    return SoftLabel(np.sort(stacked, axis=0).mean(axis=0))


def _is_ur(vote: str, ur_flags: list[bool]) -> bool:
    n_ur = sum(ur_flags)
    if vote == "any":
        return n_ur > 0
    if vote == "all":
        return n_ur == len(ur_flags)
    return n_ur * 2 > len(ur_flags)  # strict majority; ties keep the crop


def ensemble_stores(
    teachers: TeacherSet,
    cfg: CalibrationConfig,
    vote: str = "majority",
    label_policy: str = "ir_only",
) -> LabelStore:
    """Merge aligned teacher stores into one calibrated store.

    ``vote`` decides discards from the per-teacher UR verdicts.  For kept
    crops, HR vs IR resolves by majority over the non-UR teachers (ties ->
    IR).  ``label_policy`` picks what an IR crop's target averages:
    "ir_only" uses the soft labels of IR-voting teachers, "calibrated_mean"
    averages every surviving teacher's calibrated label.  Averaged targets
    are re-quantized with the input stores' top-k/bits.
    """
    if vote not in VOTE_MODES:
        raise ParameterError(f"vote must be one of {VOTE_MODES}, got {vote!r}")
    if label_policy not in LABEL_POLICIES:
        raise ParameterError(
            f"label_policy must be one of {LABEL_POLICIES}, got {label_policy!r}"
        )
    ids = teachers.teacher_ids
    base = teachers.stores[ids[0]]
    k, bits = base.top_k, base.bits
    new_entries: dict[str, tuple[CropRecord, ...]] = {}
    for image_id in base.entries:
        merged = []
        for i, ref in enumerate(base.entries[image_id]):
            per_teacher = [teachers.stores[t].entries[image_id][i] for t in ids]
            recovered = [r.recovered() for r in per_teacher]
            verdicts = [classify(max_prob(lab), cfg) for lab in recovered]
            ur_flags = [v is CropStatus.UR for v in verdicts]
            mean_all = ensemble_labels(recovered)
            if _is_ur(vote, ur_flags):
                merged.append(
                    replace(
                        ref,
                        soft_label=quantize(mean_all, k, bits),
                        status=CropStatus.UR,
                        calibrated_label=None,
                    )
                )
                continue
            survivors = [
                (v, lab) for v, lab in zip(verdicts, recovered) if v is not CropStatus.UR
            ]
            n_hr = sum(1 for v, _ in survivors if v is CropStatus.HR)
            status = CropStatus.HR if n_hr * 2 > len(survivors) else CropStatus.IR
            if status is CropStatus.HR:
                if ref.gt_class is None:
                    raise ParameterError(
                        f"hard-region verdict for {image_id!r} crop {i} without ground truth"
                    )
                target = smooth_hard(
                    ref.gt_class.class_index, cfg.epsilon, base.num_classes
                )
            elif label_policy == "ir_only":
                target = ensemble_labels(
                    [lab for v, lab in survivors if v is CropStatus.IR]
                )
            else:
                calibrated = [
                    smooth_hard(ref.gt_class.class_index, cfg.epsilon, base.num_classes)
                    if v is CropStatus.HR
                    else lab
                    for v, lab in survivors
                ]
                target = ensemble_labels(calibrated)
            q = quantize(target, k, bits)
            merged.append(
                replace(
                    ref,
                    soft_label=q,
                    status=status,
                    calibrated_label=target if status is CropStatus.HR else recover(q),
                )
            )
        new_entries[image_id] = tuple(merged)
    return replace(base, entries=new_entries, calibration=cfg)
