# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GP kernels: symmetrized SE Gram blocks and batched Cholesky solves."""

import numpy as np
from libc.math cimport exp, log, sqrt
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy

cdef double[6] _JITTER = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6]


def sym_se_gram(const double[:, :, ::1] X, const double[:, :, ::1] Y, double sf2,
                const double[::1] inv_ls2):
    cdef Py_ssize_t B = X.shape[0], M = X.shape[1], P = Y.shape[1], n = X.shape[2]
    out_arr = np.empty((B, M, P))
    cdef double[:, :, ::1] out = out_arr
    cdef double* sc = <double*> malloc(n * sizeof(double))
    cdef Py_ssize_t b, i, k, d
    cdef double xs, ys, dm, dp, d2m, d2p
    for d in range(n):
        sc[d] = sqrt(inv_ls2[d])
    with nogil:
        for b in range(B):
            for i in range(M):
                for k in range(P):
                    d2m = 0.0
                    d2p = 0.0
                    for d in range(n):
                        xs = X[b, i, d] * sc[d]
                        ys = Y[b, k, d] * sc[d]
                        dm = xs - ys
                        dp = xs + ys
                        d2m = d2m + dm * dm
                        d2p = d2p + dp * dp
                    out[b, i, k] = 0.5 * sf2 * (exp(-0.5 * d2m) + exp(-0.5 * d2p))
    free(sc)
    return out_arr


cdef int _cholesky(double* A, Py_ssize_t m) nogil:
    # in-place lower factor, row-major; upper triangle left untouched
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(m):
        s = A[j * m + j]
        for k in range(j):
            s -= A[j * m + k] * A[j * m + k]
        if not (s > 0.0):
            return 1
        s = sqrt(s)
        A[j * m + j] = s
        for i in range(j + 1, m):
            A[i * m + j] = A[i * m + j]
            for k in range(j):
                A[i * m + j] -= A[i * m + k] * A[j * m + k]
            A[i * m + j] /= s
    return 0


def factor_solve(const double[:, :, ::1] K, const double[:, :, ::1] D,
                 const double[::1] noise, double sf2, bint keep_factors=False):
    cdef Py_ssize_t B = K.shape[0], M = K.shape[1], ell = D.shape[2]
    logdet_arr = np.empty((B, ell))
    quad_arr = np.empty((B, ell))
    alpha_arr = np.empty((B, M, ell))
    jitter_arr = np.zeros(B)
    chol_arr = np.empty((B, ell, M, M)) if keep_factors else np.empty((1, 1, 1, 1))
    cdef double[:, ::1] logdet = logdet_arr
    cdef double[:, ::1] quad = quad_arr
    cdef double[:, :, ::1] alpha = alpha_arr
    cdef double[::1] jitter = jitter_arr
    cdef double[:, :, :, ::1] chol = chol_arr
    cdef double* A = <double*> malloc(M * M * sizeof(double))
    cdef double* y = <double*> malloc(M * sizeof(double))
    cdef Py_ssize_t b, j, i, k, t
    cdef int fail, attempt
    cdef double s, q, ld, jit
    cdef Py_ssize_t failed = -1
    with nogil:
        for b in range(B):
            for j in range(ell):
                fail = 1
                for attempt in range(6):
                    jit = _JITTER[attempt] * sf2
                    for i in range(M):
                        for k in range(M):
                            A[i * M + k] = K[b, i, k]
                        A[i * M + i] = A[i * M + i] + noise[j] + jit
                    fail = _cholesky(A, M)
                    if fail == 0:
                        break
                if fail:
                    failed = b
                    break
                if jit > jitter[b]:
                    jitter[b] = jit
                q = 0.0
                ld = 0.0
                for i in range(M):
                    s = D[b, i, j]
                    for k in range(i):
                        s -= A[i * M + k] * y[k]
                    y[i] = s / A[i * M + i]
                    q += y[i] * y[i]
                    ld += log(A[i * M + i])
                quad[b, j] = q
                logdet[b, j] = 2.0 * ld
                for t in range(M):
                    i = M - 1 - t
                    s = y[i]
                    for k in range(i + 1, M):
                        s -= A[k * M + i] * alpha[b, k, j]
                    alpha[b, i, j] = s / A[i * M + i]
                if keep_factors:
                    for i in range(M):
                        for k in range(M):
                            chol[b, j, i, k] = A[i * M + k] if k <= i else 0.0
            if failed >= 0:
                break
    free(A)
    free(y)
    return logdet_arr, quad_arr, alpha_arr, (chol_arr if keep_factors else None), jitter_arr, failed
