"""Desk-scale synthetic benchmark: task, oracle teacher, and trainer."""

from .task import (
    DEFAULT_NUM_CLASSES,
    IMAGE_SIZE,
    TILE_SIZE,
    SynthImage,
    SynthTask,
    class_color,
    downsample_tile,
    generate_task,
)
from .reference import reference_sampler, reference_store, reference_task
from .teacher import CONFIDENCE_CAP, OracleTeacher, build_store
from .train import (
    MODES,
    ExperimentResult,
    MLPModel,
    SweepPoint,
    TrainConfig,
    format_metrics,
    min_max_filter_sweep,
    parse_metrics,
    run_experiment,
    run_grid,
    write_metrics,
)

__all__ = [
    "DEFAULT_NUM_CLASSES",
    "IMAGE_SIZE",
    "TILE_SIZE",
    "SynthImage",
    "SynthTask",
    "class_color",
    "downsample_tile",
    "generate_task",
    "CONFIDENCE_CAP",
    "OracleTeacher",
    "build_store",
    "reference_sampler",
    "reference_store",
    "reference_task",
    "MODES",
    "ExperimentResult",
    "MLPModel",
    "SweepPoint",
    "TrainConfig",
    "format_metrics",
    "min_max_filter_sweep",
    "parse_metrics",
    "run_experiment",
    "run_grid",
    "write_metrics",
]
