# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see _pykernels for the reference semantics.

Compiled with -ffp-contract=off so float results match the fallback where
the operation order is identical (quantize, recover, crop sampling).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, rint, sqrt
from libc.stdint cimport int64_t, uint32_t, uint64_t

BACKEND = "cython"

cdef uint64_t GOLDEN_GAMMA = 0x9E3779B97F4A7C15UL
cdef double DOUBLE_SCALE = 2.0 ** -53


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9UL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBUL
    return z ^ (z >> 31)


def quantize_topk(cnp.ndarray[cnp.float64_t, ndim=1] probs, int k, int full):
    cdef int c = probs.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sel = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] q64 = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] taken = np.zeros(c, dtype=np.uint8)
    cdef const double[:] p = probs
    cdef int i, j, best, tmp
    cdef double best_p, scaled_j, over_j, best_over
    cdef long total, excess

    # top-k by probability desc, index asc (first max wins the scan)
    for j in range(k):
        best = -1
        best_p = -1.0
        for i in range(c):
            if not taken[i] and p[i] > best_p:
                best_p = p[i]
                best = i
        taken[best] = 1
        sel[j] = best
    # ascending class indices (insertion sort, k is small)
    for j in range(1, k):
        tmp = sel[j]
        i = j - 1
        while i >= 0 and sel[i] > tmp:
            sel[i + 1] = sel[i]
            i -= 1
        sel[i + 1] = tmp

    total = 0
    for j in range(k):
        q64[j] = <long> rint(p[sel[j]] * full)
        total += q64[j]
    excess = total - full
    while excess > 0:
        best = -1
        best_over = -1e308
        for j in range(k):
            if q64[j] > 0:
                over_j = q64[j] - p[sel[j]] * full
                if over_j > best_over:
                    best_over = over_j
                    best = j
        q64[best] -= 1
        excess -= 1
    # with k == c there is no residual class, so the mass must be exact
    while excess < 0 and k == c:
        best = -1
        best_over = -1e308
        for j in range(k):
            over_j = p[sel[j]] * full - q64[j]
            if over_j > best_over:
                best_over = over_j
                best = j
        q64[best] += 1
        excess += 1
    return sel, q64.astype(np.uint32)


def recover_dense(cnp.ndarray[cnp.int64_t, ndim=1] indices,
                  cnp.ndarray[cnp.uint32_t, ndim=1] qvals,
                  int num_classes, int full):
    cdef int k = indices.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dense = np.zeros(num_classes, dtype=np.float64)
    cdef double inv = 1.0 / full
    cdef double s = 0.0, d, residual, fill
    cdef int i, j
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] present = np.zeros(num_classes, dtype=np.uint8)

    for j in range(k):
        d = qvals[j] * inv
        dense[indices[j]] = d
        present[indices[j]] = 1
        s += d
    residual = 1.0 - s
    if num_classes > k:
        if residual >= 0.0:
            fill = residual / (num_classes - k)
            for i in range(num_classes):
                if not present[i]:
                    dense[i] = fill
        elif s > 0.0:
            for i in range(num_classes):
                dense[i] /= s
    else:
        if s > 0.0:
            for i in range(num_classes):
                dense[i] /= s
        else:
            for i in range(num_classes):
                dense[i] = 1.0 / num_classes
    return dense, residual


def sce_batch(cnp.ndarray[cnp.float64_t, ndim=2] logits,
              cnp.ndarray[cnp.float64_t, ndim=2] targets):
    cdef int n = logits.shape[0]
    cdef int c = logits.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] loss = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.empty((n, c), dtype=np.float64)
    cdef const double[:, :] z = logits
    cdef const double[:, :] t = targets
    cdef double[:, :] g = grad
    cdef double m, denom, lse, acc, zi
    cdef int i, j

    for i in range(n):
        m = z[i, 0]
        for j in range(1, c):
            if z[i, j] > m:
                m = z[i, j]
        denom = 0.0
        for j in range(c):
            g[i, j] = exp(z[i, j] - m)
            denom += g[i, j]
        lse = log(denom)
        acc = 0.0
        for j in range(c):
            acc += t[i, j] * (z[i, j] - m - lse)
            g[i, j] = g[i, j] / denom - t[i, j]
        loss[i] = -acc
    return loss, grad


def sample_crop_px(int width, int height,
                   double scale_min, double scale_max,
                   double ratio_min, double ratio_max,
                   int max_attempts, object state):
    cdef uint64_t s = <uint64_t> state
    cdef double area = (<double> width) * (<double> height)
    cdef double log_rmin = log(ratio_min)
    cdef double log_rmax = log(ratio_max)
    cdef double u, target_area, aspect, in_ratio
    cdef long w, h, x, y
    cdef int attempt

    for attempt in range(max_attempts):
        s = s + GOLDEN_GAMMA
        u = (_mix64(s) >> 11) * DOUBLE_SCALE
        target_area = area * (scale_min + (scale_max - scale_min) * u)
        s = s + GOLDEN_GAMMA
        u = (_mix64(s) >> 11) * DOUBLE_SCALE
        aspect = exp(log_rmin + (log_rmax - log_rmin) * u)
        w = <long> rint(sqrt(target_area * aspect))
        h = <long> rint(sqrt(target_area / aspect))
        if 0 < w <= width and 0 < h <= height:
            s = s + GOLDEN_GAMMA
            x = <long> (_mix64(s) % <uint64_t> (width - w + 1))
            s = s + GOLDEN_GAMMA
            y = <long> (_mix64(s) % <uint64_t> (height - h + 1))
            return int(s), x, y, w, h
    in_ratio = (<double> width) / (<double> height)
    if in_ratio < ratio_min:
        w = width
        h = <long> rint(width / ratio_min)
    elif in_ratio > ratio_max:
        h = height
        w = <long> rint(height * ratio_max)
    else:
        w = width
        h = height
    if w < 1:
        w = 1
    elif w > width:
        w = width
    if h < 1:
        h = 1
    elif h > height:
        h = height
    return int(s), (width - w) // 2, (height - h) // 2, w, h
