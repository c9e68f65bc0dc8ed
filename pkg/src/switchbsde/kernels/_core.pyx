# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the hot kernels.

Same algorithms and the same floating-point operation order as
``switchbsde.kernels.pure``; the kernel test suite asserts bit-identical
outputs between the two lanes.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

cdef uint64_t M0 = 0xD2511F53u
cdef uint64_t M1 = 0xCD9E8D57u
cdef uint32_t W0 = 0x9E3779B9u
cdef uint32_t W1 = 0xBB67AE85u


def philox4x32_10(c0, c1, c2, c3, k0, k1):
    """Philox-4x32 with 10 rounds, elementwise over broadcast inputs."""
    arrs = np.broadcast_arrays(
        np.asarray(c0, dtype=np.uint32),
        np.asarray(c1, dtype=np.uint32),
        np.asarray(c2, dtype=np.uint32),
        np.asarray(c3, dtype=np.uint32),
        np.asarray(k0, dtype=np.uint32),
        np.asarray(k1, dtype=np.uint32),
    )
    shape = arrs[0].shape
    cdef uint32_t[::1] a0 = np.ascontiguousarray(arrs[0]).ravel()
    cdef uint32_t[::1] a1 = np.ascontiguousarray(arrs[1]).ravel()
    cdef uint32_t[::1] a2 = np.ascontiguousarray(arrs[2]).ravel()
    cdef uint32_t[::1] a3 = np.ascontiguousarray(arrs[3]).ravel()
    cdef uint32_t[::1] key0 = np.ascontiguousarray(arrs[4]).ravel()
    cdef uint32_t[::1] key1 = np.ascontiguousarray(arrs[5]).ravel()
    cdef Py_ssize_t n = a0.shape[0]
    out0_arr = np.empty(n, dtype=np.uint32)
    out1_arr = np.empty(n, dtype=np.uint32)
    out2_arr = np.empty(n, dtype=np.uint32)
    out3_arr = np.empty(n, dtype=np.uint32)
    cdef uint32_t[::1] o0 = out0_arr
    cdef uint32_t[::1] o1 = out1_arr
    cdef uint32_t[::1] o2 = out2_arr
    cdef uint32_t[::1] o3 = out3_arr
    cdef Py_ssize_t i
    cdef int r
    cdef uint32_t x0, x1, x2, x3, kk0, kk1, hi0, lo0, hi1, lo1, t0, t1, t2, t3
    cdef uint64_t p0, p1
    with nogil:
        for i in range(n):
            x0 = a0[i]; x1 = a1[i]; x2 = a2[i]; x3 = a3[i]
            kk0 = key0[i]; kk1 = key1[i]
            for r in range(10):
                p0 = (<uint64_t> x0) * M0
                p1 = (<uint64_t> x2) * M1
                hi0 = <uint32_t> (p0 >> 32)
                lo0 = <uint32_t> (p0 & 0xFFFFFFFFu)
                hi1 = <uint32_t> (p1 >> 32)
                lo1 = <uint32_t> (p1 & 0xFFFFFFFFu)
                t0 = hi1 ^ x1 ^ kk0
                t1 = lo1
                t2 = hi0 ^ x3 ^ kk1
                t3 = lo0
                x0 = t0; x1 = t1; x2 = t2; x3 = t3
                kk0 = kk0 + W0
                kk1 = kk1 + W1
            o0[i] = x0; o1[i] = x1; o2[i] = x2; o3[i] = x3
    return (
        out0_arr.reshape(shape),
        out1_arr.reshape(shape),
        out2_arr.reshape(shape),
        out3_arr.reshape(shape),
    )


def penalized_root_batch(c, obstacles, double coef):
    """Exact roots of y = c_i + coef * sum_j max(b_ij - y, 0), row by row."""
    c_arr = np.ascontiguousarray(c, dtype=np.float64)
    obs_arr = np.ascontiguousarray(obstacles, dtype=np.float64)
    cdef Py_ssize_t n = obs_arr.shape[0]
    cdef Py_ssize_t m = obs_arr.shape[1]
    if m == 0 or coef == 0.0:
        return c_arr.copy()
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] cv = c_arr
    cdef double[:, ::1] ov = obs_arr
    cdef double[::1] yv = out_arr
    cdef double[64] b
    cdef Py_ssize_t i, j, k, pos
    cdef double s, y, key
    if m > 64:
        raise ValueError("penalized_root_batch supports at most 64 obstacles per row")
    with nogil:
        for i in range(n):
            for j in range(m):
                b[j] = ov[i, j]
            # insertion sort, descending
            for j in range(1, m):
                key = b[j]
                pos = j
                while pos > 0 and b[pos - 1] < key:
                    b[pos] = b[pos - 1]
                    pos -= 1
                b[pos] = key
            if cv[i] >= b[0]:
                yv[i] = cv[i]
                continue
            s = 0.0
            y = cv[i]
            for k in range(1, m + 1):
                s = s + b[k - 1]
                y = (cv[i] + coef * s) / (1.0 + coef * (<double> k))
                if k == m or y >= b[k]:
                    break
            yv[i] = y
    return out_arr
