# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col/col2im lowering for conv2d and max pooling.

Same signatures as telkit.kernels.reference; the package picks one of the
two at import time.  Both float32 and float64 are supported because the
gradient checker runs the whole model in 64-bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int ph, int pw):
    """Lower (B, C, H, W) into patch rows of shape (B*Ho*Wo, C*kh*kw)."""
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (w + 2 * pw - kw) // sw + 1
    out_np = np.zeros((b * ho * wo, c * kh * kw), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] out = out_np
    cdef Py_ssize_t bi, ci, oi, oj, ki, kj, ii, jj, row, col
    with nogil:
        for bi in range(b):
            for oi in range(ho):
                for oj in range(wo):
                    row = (bi * ho + oi) * wo + oj
                    for ci in range(c):
                        for ki in range(kh):
                            ii = oi * sh - ph + ki
                            if ii < 0 or ii >= h:
                                continue
                            col = (ci * kh + ki) * kw
                            for kj in range(kw):
                                jj = oj * sw - pw + kj
                                if 0 <= jj < w:
                                    out[row, col + kj] = x[bi, ci, ii, jj]
    return out_np


def col2im(real[:, ::1] cols, x_shape, int kh, int kw, int sh, int sw, int ph, int pw):
    """Adjoint of im2col: scatter-add patch rows back into (B, C, H, W)."""
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (w + 2 * pw - kw) // sw + 1
    out_np = np.zeros((b, c, h, w), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t bi, ci, oi, oj, ki, kj, ii, jj, row, col
    with nogil:
        for bi in range(b):
            for oi in range(ho):
                for oj in range(wo):
                    row = (bi * ho + oi) * wo + oj
                    for ci in range(c):
                        for ki in range(kh):
                            ii = oi * sh - ph + ki
                            if ii < 0 or ii >= h:
                                continue
                            col = (ci * kh + ki) * kw
                            for kj in range(kw):
                                jj = oj * sw - pw + kj
                                if 0 <= jj < w:
                                    out[bi, ci, ii, jj] += cols[row, col + kj]
    return out_np


def maxpool_fwd(real[:, :, :, ::1] x, int k):
    """Non-overlapping k-by-k max pool; returns (out, argmax flat plane index)."""
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // k, wo = w // k
    out_np = np.empty((b, c, ho, wo), dtype=np.asarray(x).dtype)
    idx_np = np.empty((b, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] out = out_np
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t bi, ci, oi, oj, ki, kj, ii, jj, best_i, best_j
    cdef real best, v
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oi in range(ho):
                    for oj in range(wo):
                        best = x[bi, ci, oi * k, oj * k]
                        best_i = oi * k
                        best_j = oj * k
                        for ki in range(k):
                            ii = oi * k + ki
                            for kj in range(k):
                                jj = oj * k + kj
                                v = x[bi, ci, ii, jj]
                                if v > best:
                                    best = v
                                    best_i = ii
                                    best_j = jj
                        out[bi, ci, oi, oj] = best
                        idx[bi, ci, oi, oj] = best_i * w + best_j
    return out_np, idx_np


def maxpool_bwd(real[:, :, :, ::1] g, cnp.int64_t[:, :, :, ::1] idx, x_shape):
    """Route pooled gradients back to the argmax positions."""
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    out_np = np.zeros((b, c, h, w), dtype=np.asarray(g).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t bi, ci, oi, oj, flat
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oi in range(ho):
                    for oj in range(wo):
                        flat = idx[bi, ci, oi, oj]
                        out[bi, ci, flat // w, flat % w] += g[bi, ci, oi, oj]
    return out_np
