"""The frozen reference benchmark configuration.

Every knob here was tuned once against seeds 0 through 4 and then pinned.
Three properties drove the choices: the whole mode-by-seed grid must train
in well under a minute, the random-order baseline must land just short of
its ceiling so treatments have room to separate, and the step budget must
be scarce relative to the crop count so that discarding uninformative
crops actually buys extra passes over the informative ones.  The small
crop scale floor matters: tiny crops frequently miss the object, which
fills the low-confidence band that relabeling is supposed to repair.
"""

from __future__ import annotations

from ..calibrate import CalibrationConfig, calibrate_store
from ..sampler import SamplerConfig
from ..store import LabelStore
from .task import SynthTask, generate_task
from .teacher import OracleTeacher, build_store

TASK_SEED = 2026
TRAIN_IMAGES = 256
VAL_IMAGES = 320
CROPS_PER_IMAGE = 4
TEACHER_SEED = 11
TEACHER_NOISE = 1.5
CROP_SCALE_MIN = 0.03
CROP_SCALE_MAX = 0.5


def reference_task() -> SynthTask:
    return generate_task(TASK_SEED, (TRAIN_IMAGES, VAL_IMAGES))


def reference_sampler() -> SamplerConfig:
    return SamplerConfig(scale_min=CROP_SCALE_MIN, scale_max=CROP_SCALE_MAX)


def reference_store(task: SynthTask | None = None) -> LabelStore:
    """Calibrated label store for ``task`` under the frozen knobs."""
    if task is None:
        task = reference_task()
    teacher = OracleTeacher(noise_scale=TEACHER_NOISE, seed=TEACHER_SEED)
    raw = build_store(
        task,
        teacher,
        crops_per_image=CROPS_PER_IMAGE,
        sampler_cfg=reference_sampler(),
    )
    store, _ = calibrate_store(raw, CalibrationConfig())
    return store
