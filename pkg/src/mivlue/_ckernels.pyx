# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def cell_sums(const signed char[:, ::1] Z, const long[:, ::1] D, const double[::1] p,
              const double[:, ::1] values, Py_ssize_t max_deg):
    cdef Py_ssize_t m = Z.shape[0], n = Z.shape[1], k, i
    out = np.zeros((n, 2, max_deg + 1), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for k in range(m):
        for i in range(n):
            o[i, Z[k, i], D[k, i]] += p[k] * values[k, i]
    return out


def stratified_weights(const signed char[:, ::1] Z, const long[:, ::1] D, Py_ssize_t max_deg):
    cdef Py_ssize_t m = Z.shape[0], n = Z.shape[1], k, i, d, K = max_deg + 1
    W = np.zeros((m, n), dtype=np.float64)
    ok = np.zeros(m, dtype=bool)
    cdef double[:, ::1] w = W
    cdef cnp.uint8_t[::1] okv = ok.view(np.uint8)
    cdef long[:, ::1] cnt = np.zeros((2, K), dtype=np.int64)
    cdef double[::1] C = np.zeros(K, dtype=np.float64)
    cdef double total, n0, n1
    for k in range(m):
        for d in range(K):
            cnt[0, d] = 0
            cnt[1, d] = 0
        for i in range(n):
            cnt[Z[k, i], D[k, i]] += 1
        total = 0.0
        for d in range(K):
            n0 = cnt[0, d]
            n1 = cnt[1, d]
            if n0 > 0 and n1 > 0:
                C[d] = n0 * n1 / (n0 + n1)
            else:
                C[d] = 0.0
            total += C[d]
        if total <= 0.0:
            continue
        okv[k] = 1
        for i in range(n):
            w[k, i] = C[D[k, i]] / total * (2.0 * Z[k, i] - 1.0) / cnt[Z[k, i], D[k, i]]
    return W, ok
