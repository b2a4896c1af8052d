# cython: language_level=3
"""Compiled temporal-convolution kernels (im2col / col2im).

Same layout contract as the numpy fallback: channels-last activations
(N, T, V, C) with implicit symmetric zero padding of the time axis; column
buffers are (N, To, V, width*C) with flat index k*C + c. The compiled
version walks flat memory once per buffer and zeroes only the rows that
fall outside the signal.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"

ctypedef fused floating:
    float
    double


def out_frames(int t, int width, int stride, int pad):
    return (t + 2 * pad - width) // stride + 1


@cython.boundscheck(False)
@cython.wraparound(False)
def temporal_im2col(floating[:, :, :, ::1] x, int width, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], t = x.shape[1], v = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t t_out = (t + 2 * pad - width) // stride + 1
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    cols_arr = np.empty((n, t_out, v, width * c), dtype=dtype)
    cdef floating[:, :, :, ::1] cols = cols_arr
    cdef Py_ssize_t i, o, j, k, q, t_src
    cdef floating* dst
    cdef const floating* src
    for i in range(n):
        for o in range(t_out):
            for k in range(width):
                t_src = o * stride + k - pad
                if 0 <= t_src < t:
                    for j in range(v):
                        dst = &cols[i, o, j, k * c]
                        src = &x[i, t_src, j, 0]
                        for q in range(c):
                            dst[q] = src[q]
                else:
                    for j in range(v):
                        dst = &cols[i, o, j, k * c]
                        for q in range(c):
                            dst[q] = 0.0
    return cols_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def temporal_col2im(floating[:, :, :, ::1] cols, int width, int stride, int pad, int t):
    cdef Py_ssize_t n = cols.shape[0], t_out = cols.shape[1], v = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3] // width
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, t, v, c), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, o, j, k, q, t_src
    cdef floating* dst
    cdef const floating* src
    # tap-major accumulation order, matching the numpy fallback bitwise
    for k in range(width):
        for i in range(n):
            for o in range(t_out):
                t_src = o * stride + k - pad
                if 0 <= t_src < t:
                    for j in range(v):
                        dst = &out[i, t_src, j, 0]
                        src = &cols[i, o, j, k * c]
                        for q in range(c):
                            dst[q] += src[q]
    return out_arr
