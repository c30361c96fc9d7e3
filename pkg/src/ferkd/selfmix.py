"""Within-image box mixing with consistently mixed labels.

Standard box-mix augmentations paste a patch from a *different* image,
which under soft supervision makes the label a blend of two unrelated
distributions and destabilizes training.  Here both patches come from crops
of the same source image: pairs are formed by a seeded shuffle of an
image's surviving crops, a Beta-drawn mixing weight becomes a square paste
box, and the label mixes with exactly the weight the clamped box realizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibrate import CropRecord, CropStatus
from .errors import ParameterError, ShapeError
from .labels import SoftLabel
from .rng import Stream
from .sampler import BBox

DEFAULT_BETA_ALPHA = 1.0  # box-mix convention; the plan applies with prob 1
_AREA_TOL = 1e-9


@dataclass(frozen=True)
class MixPlan:
    """One planned paste: crop_b's box region overwrites crop_a's.

    ``lambda_eff`` is crop_a's label weight and always equals one minus the
    realized paste-box area.  Both crops must come from the same image.
    """

    image_id: str
    index_a: int
    index_b: int
    paste_box: BBox
    lambda_eff: float

    def __post_init__(self):
        if self.index_a == self.index_b:
            raise ParameterError("a crop cannot mix with itself")
        if abs(self.lambda_eff - (1.0 - self.paste_box.area)) > _AREA_TOL:
            raise ParameterError(
                f"lambda_eff {self.lambda_eff} inconsistent with paste area "
                f"{self.paste_box.area}"
            )


def plan_selfmix(
    crops_of_image: Sequence[CropRecord],
    stream: Stream,
    beta_alpha: float = DEFAULT_BETA_ALPHA,
) -> list[MixPlan]:
    """Pair the eligible crops of one image and draw their paste boxes.

    Eligible means not discarded by calibration (uncalibrated records are
    all eligible).  A seeded shuffle pairs adjacent entries; an odd crop is
    left unmixed; fewer than two eligible crops yields an empty plan.  Per
    pair the draws are: mixing weight ~ Beta(a, a), then the box center
    (two uniforms).
    """
    if beta_alpha <= 0.0:
        raise ParameterError(f"beta_alpha must be positive, got {beta_alpha}")
    image_ids = {r.image_id for r in crops_of_image}
    if len(image_ids) > 1:
        raise ParameterError(f"crops span multiple images: {sorted(image_ids)}")
    eligible = [
        i for i, r in enumerate(crops_of_image) if r.status is not CropStatus.UR
    ]
    if len(eligible) < 2:
        return []
    stream.shuffle(eligible)
    image_id = crops_of_image[0].image_id
    plans = []
    for a, b in zip(eligible[0::2], eligible[1::2]):
        lam = stream.beta(beta_alpha)
        side = math.sqrt(1.0 - lam)
        cx = stream.next_double()
        cy = stream.next_double()
        x0 = max(0.0, cx - side / 2.0)
        y0 = max(0.0, cy - side / 2.0)
        x1 = min(1.0, cx + side / 2.0)
        y1 = min(1.0, cy + side / 2.0)
        box = BBox(x=x0, y=y0, w=max(0.0, x1 - x0), h=max(0.0, y1 - y0))
        plans.append(
            MixPlan(
                image_id=image_id,
                index_a=a,
                index_b=b,
                paste_box=box,
                lambda_eff=1.0 - box.area,
            )
        )
    return plans


def mix_labels(y_a: SoftLabel, y_b: SoftLabel, lambda_eff: float) -> SoftLabel:
    """Convex combination lambda_eff * y_a + (1 - lambda_eff) * y_b.

    Computed as y_b + lambda_eff * (y_a - y_b) with exact endpoints, so
    mixing a label with itself returns it unchanged for every weight.
    """
    if y_a.num_classes != y_b.num_classes:
        raise ShapeError(
            f"label sizes differ: {y_a.num_classes} vs {y_b.num_classes}"
        )
    if not 0.0 <= lambda_eff <= 1.0:
        raise ParameterError(f"lambda_eff must be in [0, 1], got {lambda_eff}")
    if lambda_eff == 1.0:
        return y_a
    if lambda_eff == 0.0:
        return y_b
    return SoftLabel(y_b.probs + lambda_eff * (y_a.probs - y_b.probs))


def mix_pixels(
    pix_a: np.ndarray, pix_b: np.ndarray, paste_box: BBox
) -> np.ndarray:
    """Copy of pix_a with pix_b's paste_box region pasted over it.

    The box is in tile-normalized coordinates; pixel bounds round to
    nearest, so a zero-area box is a no-op and the full box returns pix_b.
    """
    if pix_a.shape != pix_b.shape:
        raise ShapeError(f"tile shapes differ: {pix_a.shape} vs {pix_b.shape}")
    if pix_a.ndim < 2:
        raise ShapeError(f"tiles must be at least 2-D, got shape {pix_a.shape}")
    h, w = pix_a.shape[0], pix_a.shape[1]
    x0 = int(round(paste_box.x * w))
    y0 = int(round(paste_box.y * h))
    x1 = int(round((paste_box.x + paste_box.w) * w))
    y1 = int(round((paste_box.y + paste_box.h) * h))
    out = pix_a.copy()
    out[y0:y1, x0:x1] = pix_b[y0:y1, x0:x1]
    return out
