"""Probability-vector types, fixed-point quantization, and crop statistics.

Teacher predictions live in two forms: a dense ``SoftLabel`` over all
classes, and the sparse ``QuantizedSoftLabel`` actually persisted to disk
(top-K classes at B-bit fixed point).  ``quantize``/``recover`` convert
between them; ``bin_statistics`` summarizes a population of labels by their
max probability, which is the difficulty signal the calibrator keys on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import EmptyInputError, NumericError, ParameterError, ShapeError

DEFAULT_TOP_K = 10
DEFAULT_BITS = 8

# Max-probability histogram edges used for crop-population reports: 0.1-wide
# bins up to 0.8, then 0.05-wide where the mass concentrates.
DEFAULT_BIN_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 1.0)

_SUM_TOL = 1e-6


def _as_prob_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ShapeError(f"probability vector must be 1-D and non-empty, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class SoftLabel:
    """Dense probability distribution over the class set.

    Entries are validated to [0, 1] and the total to 1 +/- 1e-6; the backing
    array is made read-only so labels can be shared across workers.
    """

    probs: np.ndarray

    def __post_init__(self):
        arr = _as_prob_array(self.probs)
        if not np.all(np.isfinite(arr)):
            raise NumericError("soft label contains non-finite entries")
        if arr.min() < 0.0 or arr.max() > 1.0 + _SUM_TOL:
            raise ParameterError("soft label entries must lie in [0, 1]")
        total = float(arr.sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise ParameterError(f"soft label mass {total!r} not within 1e-6 of 1")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, SoftLabel) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    @classmethod
    def uniform(cls, num_classes: int) -> "SoftLabel":
        return cls(np.full(num_classes, 1.0 / num_classes))


@dataclass(frozen=True)
class HardLabel:
    """Ground-truth class index."""

    class_index: int
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 1:
            raise ParameterError(f"num_classes must be >= 1, got {self.num_classes}")
        if not 0 <= self.class_index < self.num_classes:
            raise ParameterError(
                f"class_index {self.class_index} outside [0, {self.num_classes})"
            )


@dataclass(frozen=True)
class QuantizedSoftLabel:
    """Sparse top-K label: (class index, B-bit level) pairs, indices ascending.

    A level of ``2**bits - 1`` is probability 1.0.  The dequantized mass of
    the stored entries never exceeds 1 (+1e-6), which ``quantize`` enforces.
    """

    entries: tuple[tuple[int, int], ...]
    num_classes: int
    bits: int

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise ParameterError(f"bits must be in [1, 16], got {self.bits}")
        if not self.entries:
            raise ParameterError("quantized label needs at least one entry")
        if len(self.entries) > self.num_classes:
            raise ParameterError("more entries than classes")
        full = (1 << self.bits) - 1
        prev = -1
        mass = 0
        for cls_idx, level in self.entries:
            if cls_idx <= prev:
                raise ParameterError("class indices must be strictly increasing")
            if cls_idx >= self.num_classes:
                raise ParameterError(f"class index {cls_idx} >= num_classes {self.num_classes}")
            if not 0 <= level <= full:
                raise ParameterError(f"level {level} outside [0, {full}]")
            prev = cls_idx
            mass += level
        if mass / full > 1.0 + _SUM_TOL:
            raise ParameterError(f"dequantized mass {mass / full} exceeds 1")

    @property
    def top_k(self) -> int:
        return len(self.entries)

    def class_indices(self) -> np.ndarray:
        return np.fromiter((c for c, _ in self.entries), dtype=np.int64, count=len(self.entries))

    def levels(self) -> np.ndarray:
        return np.fromiter((q for _, q in self.entries), dtype=np.uint32, count=len(self.entries))


@dataclass(frozen=True)
class BinStats:
    """Histogram of label max-probabilities plus its running total."""

    bin_edges: tuple[float, ...]
    bin_ratio: tuple[float, ...]
    agg_ratio: tuple[float, ...] = field(default=())

    def __post_init__(self):
        edges = tuple(float(e) for e in self.bin_edges)
        ratios = tuple(float(r) for r in self.bin_ratio)
        if len(edges) < 2 or len(ratios) != len(edges) - 1:
            raise ShapeError("need len(bin_edges) == len(bin_ratio) + 1 >= 2")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ParameterError("bin edges must be strictly ascending")
        agg = tuple(float(a) for a in np.cumsum(ratios))
        if self.agg_ratio:
            given = tuple(float(a) for a in self.agg_ratio)
            if len(given) != len(agg) or max(
                abs(a - b) for a, b in zip(given, agg)
            ) > 1e-9:
                raise ParameterError("agg_ratio is not the running sum of bin_ratio")
            agg = given
        if abs(agg[-1] - 1.0) > 1e-9:
            raise ParameterError(f"bin ratios must total 1, got {agg[-1]!r}")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "bin_ratio", ratios)
        object.__setattr__(self, "agg_ratio", agg)


def quantize(label: SoftLabel, top_k: int = DEFAULT_TOP_K, bits: int = DEFAULT_BITS) -> QuantizedSoftLabel:
    """Keep the top-k entries of ``label`` at ``bits``-bit fixed point.

    Ties on probability break toward the lower class index, so the result is
    independent of how the input array was produced.
    """
    if not 1 <= bits <= 16:
        raise ParameterError(f"bits must be in [1, 16], got {bits}")
    if not 1 <= top_k <= label.num_classes:
        raise ParameterError(
            f"top_k must be in [1, {label.num_classes}], got {top_k}"
        )
    full = (1 << bits) - 1
    idx, levels = _kernels.quantize_topk(np.asarray(label.probs, dtype=np.float64), top_k, full)
    entries = tuple((int(i), int(q)) for i, q in zip(idx, levels))
    return QuantizedSoftLabel(entries=entries, num_classes=label.num_classes, bits=bits)


def recover(q: QuantizedSoftLabel) -> SoftLabel:
    """Expand a quantized label back to the full class dimension.

    The mass lost to truncation is spread uniformly over the classes that
    were not stored; when every class was stored and more than 1e-3 of mass
    is missing there is nowhere to put it, which is an inconsistency.
    """
    full = (1 << q.bits) - 1
    dense, residual = _kernels.recover_dense(q.class_indices(), q.levels(), q.num_classes, full)
    if q.num_classes == q.top_k and residual > 1e-3:
        raise ParameterError(
            f"full-dimension label is missing {residual:.4f} probability mass"
        )
    return SoftLabel(dense)


def max_prob(label: SoftLabel) -> float:
    """Largest entry of the distribution (the teacher's confidence)."""
    return float(label.probs.max())


def bin_statistics(
    labels: Iterable[SoftLabel], edges: Sequence[float] = DEFAULT_BIN_EDGES
) -> BinStats:
    """Histogram the max-probabilities of ``labels`` over ``edges``.

    Bins are half-open [a, b) except the last, which is closed so that a max
    probability of exactly 1.0 is counted.
    """
    values = [max_prob(lab) for lab in labels]
    return bin_statistics_from_values(values, edges)


def bin_statistics_from_values(
    values: Sequence[float] | np.ndarray, edges: Sequence[float] = DEFAULT_BIN_EDGES
) -> BinStats:
    """Same as :func:`bin_statistics` but on precomputed max-probabilities."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise EmptyInputError("bin_statistics needs at least one label")
    e = np.asarray(edges, dtype=np.float64)
    if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
        raise ParameterError("edges must be ascending with at least two values")
    if abs(e[0]) > 1e-12 or abs(e[-1] - 1.0) > 1e-12:
        raise ParameterError("edges must cover [0, 1]")
    counts, _ = np.histogram(vals, bins=e)  # final bin closed, matching ours
    ratios = counts / vals.size
    return BinStats(bin_edges=tuple(e), bin_ratio=tuple(ratios))
