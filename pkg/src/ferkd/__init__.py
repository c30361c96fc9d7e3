"""Soft-label pipeline for knowledge distillation at region granularity.

The pieces, in data-flow order: sample crop regions (``sampler``), store
quantized teacher distributions for them (``labels``, ``store``), sort the
crops into discard/relabel/keep buckets (``calibrate``), optionally merge
several teachers (``ensemble``), mix same-image crops (``selfmix``), and
train against the result (``losses``, ``bench``) locally or over a socket
(``server``).
"""

from . import bench
from .calibrate import (
    CalibrationConfig,
    CalibrationReport,
    CropRecord,
    CropStatus,
    calibrate_record,
    calibrate_store,
    classify,
    smooth_hard,
)
from .ensemble import TeacherSet, ensemble_labels, ensemble_stores
from .errors import (
    AlignmentError,
    DataError,
    DivergenceError,
    EmptyInputError,
    FerkdError,
    IngestError,
    MagicError,
    NumericError,
    ParameterError,
    ProtocolError,
    ShapeError,
    StateError,
    StoreFormatError,
    StoreInvariantError,
    TruncationError,
    VersionError,
)
from .labels import (
    DEFAULT_BIN_EDGES,
    DEFAULT_BITS,
    DEFAULT_TOP_K,
    BinStats,
    HardLabel,
    QuantizedSoftLabel,
    SoftLabel,
    bin_statistics,
    bin_statistics_from_values,
    max_prob,
    quantize,
    recover,
)
from .losses import (
    LossConfig,
    entropy,
    ferkd_loss,
    kl_loss,
    sce_batch,
    sce_loss,
    vkd_loss,
)
from .rng import Stream, derive, spawn
from .sampler import (
    BBox,
    OrderMode,
    OrderPolicy,
    SamplerConfig,
    center_distance,
    order_records,
    pixel_box,
    sample_crop,
    sample_crops,
)
from .selfmix import MixPlan, mix_labels, mix_pixels, plan_selfmix
from .server import LabelServer, serve
from .store import (
    LabelStore,
    from_bytes,
    ingest_predictions,
    read_store,
    summary,
    to_bytes,
    write_store,
)

__version__ = "0.1.0"
