"""Pure-Python/numpy fallback for the hot kernels.

Mirrors ``_cykernels`` operation for operation.  Integer outputs
(quantization, crop geometry, RNG streams) are bit-identical to the compiled
backend; float reductions may differ in the last ulp where numpy's pairwise
summation reorders additions (documented per function).
"""

from __future__ import annotations

import math

import numpy as np

from ..rng import GOLDEN_GAMMA, MASK64, mix64

BACKEND = "pure"


def quantize_topk(probs: np.ndarray, k: int, full: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k selection + fixed-point rounding of a probability vector.

    Selection is by probability descending, index ascending on ties; values
    round to the nearest multiple of 1/full (half to even).  If rounding
    pushes the integer mass above ``full``, the most over-rounded nonzero
    entries are decremented (ties to the lower class index) until it fits.
    When every class is kept (k = c) the mass must land exactly on ``full``,
    since there are no absent classes to carry a residual, so a deficit is
    paid back by incrementing the most under-rounded entries.
    Returns (class indices ascending, integer levels), both length k.
    Bit-identical across backends.
    """
    c = probs.shape[0]
    order = np.lexsort((np.arange(c), -probs))
    sel = np.sort(order[:k]).astype(np.int64)
    scaled = probs[sel] * float(full)
    q = np.rint(scaled).astype(np.int64)
    excess = int(q.sum()) - full
    while excess > 0:
        over = np.where(q > 0, q - scaled, -np.inf)
        i = int(np.argmax(over))
        q[i] -= 1
        excess -= 1
    while excess < 0 and k == c:
        i = int(np.argmax(scaled - q))
        q[i] += 1
        excess += 1
    return sel, q.astype(np.uint32)


def recover_dense(
    indices: np.ndarray, qvals: np.ndarray, num_classes: int, full: int
) -> tuple[np.ndarray, float]:
    """Dequantize a sparse top-k label back to a dense distribution.

    Residual mass (1 - stored mass) is spread uniformly over the absent
    classes; a negative residual is clamped to zero and the stored entries
    renormalized.  Returns (dense vector, residual before clamping).
    Bit-identical across backends (the k-element sum is sequential).
    """
    k = indices.shape[0]
    dense = np.zeros(num_classes, dtype=np.float64)
    inv = 1.0 / float(full)
    s = 0.0
    for j in range(k):
        d = float(qvals[j]) * inv
        dense[indices[j]] = d
        s += d
    residual = 1.0 - s
    if num_classes > k:
        if residual >= 0.0:
            fill = residual / float(num_classes - k)
            mask = np.ones(num_classes, dtype=bool)
            mask[indices] = False
            dense[mask] = fill
        elif s > 0.0:
            dense /= s
    else:
        if s > 0.0:
            dense /= s
        else:
            dense[:] = 1.0 / num_classes
    return dense, residual


def sce_batch(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row soft cross-entropy and its logit gradient, log-sum-exp stable.

    loss[n] = -sum_i t[n,i] * log softmax(logits[n])_i
    grad[n] = softmax(logits[n]) - t[n]
    Cross-backend equality holds to ~1e-15 (summation order differs).
    """
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    loss = -(targets * logp).sum(axis=1)
    grad = ez / denom - targets
    return loss, grad


def sample_crop_px(
    width: int,
    height: int,
    scale_min: float,
    scale_max: float,
    ratio_min: float,
    ratio_max: float,
    max_attempts: int,
    state: int,
) -> tuple[int, int, int, int, int]:
    """Rejection-sample one pixel crop box; returns (state, x, y, w, h).

    Draw order per attempt: scale fraction, log-aspect; on acceptance two
    bounded draws for x then y.  The fallback (centered, aspect clamped)
    consumes no further draws.  Bit-identical across backends.
    """
    area = float(width) * float(height)
    log_rmin = math.log(ratio_min)
    log_rmax = math.log(ratio_max)
    for _ in range(max_attempts):
        state = (state + GOLDEN_GAMMA) & MASK64
        u = (mix64(state) >> 11) * 2.0**-53
        target_area = area * (scale_min + (scale_max - scale_min) * u)
        state = (state + GOLDEN_GAMMA) & MASK64
        u = (mix64(state) >> 11) * 2.0**-53
        aspect = math.exp(log_rmin + (log_rmax - log_rmin) * u)
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            state = (state + GOLDEN_GAMMA) & MASK64
            x = mix64(state) % (width - w + 1)
            state = (state + GOLDEN_GAMMA) & MASK64
            y = mix64(state) % (height - h + 1)
            return state, x, y, w, h
    in_ratio = float(width) / float(height)
    if in_ratio < ratio_min:
        w = width
        h = int(round(width / ratio_min))
    elif in_ratio > ratio_max:
        h = height
        w = int(round(height * ratio_max))
    else:
        w = width
        h = height
    w = min(max(w, 1), width)
    h = min(max(h, 1), height)
    return state, (width - w) // 2, (height - h) // 2, w, h
