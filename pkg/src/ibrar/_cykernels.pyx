# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled data-movement kernels, layout-identical to `_npkernels`.

im2col rows are output pixels, columns are (channel, ky, kx); max-pool
indices are the row-major window position of the winner, first on ties.
GEMMs stay in NumPy so both backends share the same BLAS.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = hp - k + 1, wo = wp - k + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n * ho * wo, c * k * k), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t i, ch, y0, x0, ky, kx, row, col
    with nogil:
        for i in range(n):
            for y0 in range(ho):
                for x0 in range(wo):
                    row = (i * ho + y0) * wo + x0
                    col = 0
                    for ch in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                out[row, col] = xp[i, ch, y0 + ky, x0 + kx]
                                col += 1
    return out_arr


def col2im_add(floating[:, ::1] cols, Py_ssize_t n, Py_ssize_t c,
               Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t k):
    cdef Py_ssize_t ho = hp - k + 1, wo = wp - k + 1
    dtype = np.float32 if floating is float else np.float64
    xp_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] xp = xp_arr
    cdef Py_ssize_t i, ch, y0, x0, ky, kx, row, col
    with nogil:
        for i in range(n):
            for y0 in range(ho):
                for x0 in range(wo):
                    row = (i * ho + y0) * wo + x0
                    col = 0
                    for ch in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                xp[i, ch, y0 + ky, x0 + kx] += cols[row, col]
                                col += 1
    return xp_arr


def maxpool2x2_fwd(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, c, ho, wo), dtype=dtype)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, ch, oy, ox, dy, dx
    cdef floating best, v
    cdef unsigned char pos, p
    with nogil:
        for i in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = x[i, ch, 2 * oy, 2 * ox]
                        pos = 0
                        p = 0
                        for dy in range(2):
                            for dx in range(2):
                                if p > 0:
                                    v = x[i, ch, 2 * oy + dy, 2 * ox + dx]
                                    if v > best:
                                        best = v
                                        pos = p
                                p += 1
                        y[i, ch, oy, ox] = best
                        idx[i, ch, oy, ox] = pos
    return y_arr, idx_arr


def maxpool2x2_bwd(unsigned char[:, :, :, ::1] idx, floating[:, :, :, ::1] gy):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((n, c, 2 * ho, 2 * wo), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, ch, oy, ox
    cdef unsigned char pos
    with nogil:
        for i in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        pos = idx[i, ch, oy, ox]
                        gx[i, ch, 2 * oy + (pos >> 1), 2 * ox + (pos & 1)] = gy[i, ch, oy, ox]
    return gx_arr
