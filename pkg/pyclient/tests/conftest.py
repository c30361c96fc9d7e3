"""Shared fixtures for the client tests.

The producer package (ferkd) acts as the test oracle here: it builds the
stores the client reads and runs the server the client streams from.  It
is a test-only dependency; the client itself stays stdlib-only.
"""

from pathlib import Path

import pytest

from ferkd.calibrate import CalibrationConfig, CropRecord, CropStatus, smooth_hard
from ferkd.labels import HardLabel, QuantizedSoftLabel, recover
from ferkd.sampler import BBox, SamplerConfig
from ferkd.store import LabelStore

GOLDEN_PATH = Path(__file__).resolve().parents[2] / "tests" / "data" / "golden.ferk"

# (bbox, flip, status, gt, pairs) per crop; five records survive calibration
# (two IR + one HR + one IR + one HR), one UR is discarded by the server.
FIVE_LAYOUT = {
    "im0": (
        ((0.0, 0.0, 0.5, 0.5), 0, CropStatus.IR, None, ((1, 200), (5, 30))),
        ((0.25, 0.25, 0.5, 0.5), 1, CropStatus.IR, 4, ((0, 150), (2, 60))),
    ),
    "im1": (
        ((0.0, 0.5, 0.25, 0.25), 0, CropStatus.HR, 3, ((3, 60), (6, 40))),
        ((0.5, 0.0, 0.5, 0.25), 1, CropStatus.UR, 1, ((4, 250), (7, 4))),
    ),
    "im2": (
        ((0.125, 0.125, 0.25, 0.5), 0, CropStatus.IR, 0, ((0, 100), (4, 90))),
        ((0.5, 0.5, 0.25, 0.25), 1, CropStatus.HR, 2, ((2, 70), (5, 50))),
    ),
}


def build_calibrated_store(layout, num_classes=8, top_k=2) -> LabelStore:
    calib = CalibrationConfig()
    entries = {}
    for image_id, crops in layout.items():
        recs = []
        for bbox, flip, status, gt, pairs in crops:
            q = QuantizedSoftLabel(pairs, num_classes=num_classes, bits=8)
            if status is CropStatus.HR:
                label = smooth_hard(gt, calib.epsilon, num_classes)
            elif status is CropStatus.IR:
                label = recover(q)
            else:
                label = None
            recs.append(
                CropRecord(
                    image_id=image_id,
                    bbox=BBox(*bbox),
                    hflip=bool(flip),
                    soft_label=q,
                    gt_class=None if gt is None else HardLabel(gt, num_classes),
                    status=status,
                    calibrated_label=label,
                )
            )
        entries[image_id] = tuple(recs)
    return LabelStore(
        num_classes=num_classes,
        top_k=top_k,
        bits=8,
        entries=entries,
        sampler=SamplerConfig(scale_min=0.1, scale_max=0.9),
        calibration=calib,
    )


@pytest.fixture(scope="session")
def five_store() -> LabelStore:
    return build_calibrated_store(FIVE_LAYOUT)


@pytest.fixture(scope="session")
def all_ur_store() -> LabelStore:
    layout = {"lone": (((0.0, 0.0, 0.5, 0.5), 0, CropStatus.UR, None, ((0, 250), (1, 3))),)}
    return build_calibrated_store(layout, num_classes=4, top_k=2)


@pytest.fixture(scope="session")
def golden_path() -> Path:
    return GOLDEN_PATH
