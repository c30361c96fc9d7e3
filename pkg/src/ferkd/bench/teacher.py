"""Closed-form stand-in for a trained teacher network.

Confidence on the true class follows a logistic curve in object coverage
(the fraction of crop pixels that fall on the object), rescaled to lie
between chance (1/C) and a 0.99 cap.  The leftover mass is spread over the
other classes with multiplicative seeded noise, so low-coverage crops get
genuinely ambiguous distributions in which a wrong class can edge out the
true one, the situation ground-truth relabeling exists to repair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..calibrate import CropRecord
from ..errors import ParameterError
from ..labels import HardLabel, SoftLabel, quantize
from ..rng import spawn
from ..sampler import BBox, SamplerConfig, pixel_box, sample_crops
from ..store import LabelStore
from .task import SynthImage, SynthTask

DEFAULT_SLOPE = 8.0
DEFAULT_MIDPOINT = 0.25
DEFAULT_NOISE_SCALE = 1.0
CONFIDENCE_CAP = 0.99


@dataclass(frozen=True)
class OracleTeacher:
    """Coverage-to-confidence curve plus the noise that shapes the tail."""

    k: float = DEFAULT_SLOPE
    c0: float = DEFAULT_MIDPOINT
    noise_scale: float = DEFAULT_NOISE_SCALE
    seed: int = 0

    def __post_init__(self):
        if self.k <= 0.0:
            raise ParameterError(f"slope must be positive, got {self.k}")
        if not 0.0 <= self.c0 <= 1.0:
            raise ParameterError(f"midpoint must be in [0, 1], got {self.c0}")
        if self.noise_scale < 0.0:
            raise ParameterError(f"noise scale must be >= 0, got {self.noise_scale}")

    def confidence(self, coverage: float, num_classes: int) -> float:
        """logistic(k(c - c0)) rescaled from (0, 1) onto [1/C, cap]."""
        if not 0.0 <= coverage <= 1.0:
            raise ParameterError(f"coverage must be in [0, 1], got {coverage}")
        lo = 1.0 / num_classes
        sig = 1.0 / (1.0 + math.exp(-self.k * (coverage - self.c0)))
        return lo + (CONFIDENCE_CAP - lo) * sig

    def predict(self, image: SynthImage, bbox: BBox, num_classes: int) -> SoftLabel:
        """Soft label for one crop of ``image``.

        The non-true classes share the remaining mass in proportion to
        exp(noise_scale * u), u uniform on [-1, 1], drawn from a stream
        keyed by teacher seed, image id, and the crop's pixel box, so the
        same crop always gets the same label and two teachers with
        different seeds disagree in the tails.
        """
        size = image.pixels.shape[0]
        x0, y0, x1, y1 = pixel_box(bbox, size, size)
        box_area = (x1 - x0) * (y1 - y0)
        coverage = 0.0
        if box_area > 0:
            coverage = float(image.mask[y0:y1, x0:x1].sum()) / box_area
        p_gt = self.confidence(coverage, num_classes)
        stream = spawn(self.seed, "oracle", image.image_id, x0, y0, x1, y1)
        u = stream.doubles(num_classes - 1) * 2.0 - 1.0
        weights = np.exp(self.noise_scale * u)
        dense = np.empty(num_classes, dtype=np.float64)
        gt = image.class_index
        others = (1.0 - p_gt) * weights / weights.sum()
        dense[:gt] = others[:gt]
        dense[gt] = p_gt
        dense[gt + 1 :] = others[gt:]
        return SoftLabel(dense)


def build_store(
    task: SynthTask,
    teacher: OracleTeacher,
    crops_per_image: int = 4,
    sampler_cfg: SamplerConfig | None = None,
    top_k: int = 10,
    bits: int = 8,
) -> LabelStore:
    """Sample crops of every training image and label them with ``teacher``.

    Each image gets its own crop stream derived from the sampler seed and
    the image id, so stores from different teachers over the same task are
    crop-aligned and ensemble-ready.
    """
    if crops_per_image < 1:
        raise ParameterError(f"need at least 1 crop per image, got {crops_per_image}")
    if sampler_cfg is None:
        sampler_cfg = SamplerConfig()
    size = task.image_size
    entries: dict[str, tuple[CropRecord, ...]] = {}
    for image in task.train:
        stream = spawn(sampler_cfg.seed, "crops", image.image_id)
        crops = sample_crops(size, size, crops_per_image, sampler_cfg, stream)
        recs = []
        for bbox, flip in crops:
            label = teacher.predict(image, bbox, task.num_classes)
            recs.append(
                CropRecord(
                    image_id=image.image_id,
                    bbox=bbox,
                    hflip=flip,
                    soft_label=quantize(label, top_k, bits),
                    gt_class=HardLabel(image.class_index, task.num_classes),
                )
            )
        entries[image.image_id] = tuple(recs)
    return LabelStore(
        num_classes=task.num_classes,
        top_k=top_k,
        bits=bits,
        entries=entries,
        sampler=sampler_cfg,
    )
