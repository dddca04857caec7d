# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused attention kernels: BLAS matmuls with in-place softmax loops.

Same contract as attn_py; float64 only. The fused softmax and
softmax-gradient loops avoid the temporaries the numpy backend allocates.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_ab(double* a, double* b, double* c,
                   int m, int n, int k, double alpha) noexcept nogil:
    # Row-major C(m,n) = alpha * A(m,k) @ B(k,n)
    cdef char nt = b'N'
    cdef double beta = 0.0
    dgemm(&nt, &nt, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef void _gemm_abt(double* a, double* b, double* c,
                    int m, int n, int k, double alpha) noexcept nogil:
    # Row-major C(m,n) = alpha * A(m,k) @ B(n,k)^T
    cdef char t = b'T'
    cdef char nt = b'N'
    cdef double beta = 0.0
    dgemm(&t, &nt, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


cdef void _gemm_atb(double* a, double* b, double* c,
                    int m, int n, int k, double alpha) noexcept nogil:
    # Row-major C(m,n) = alpha * A(k,m)^T @ B(k,n)
    cdef char t = b'T'
    cdef char nt = b'N'
    cdef double beta = 0.0
    dgemm(&nt, &t, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


cdef void _softmax_rows(double* s, int t) noexcept nogil:
    cdef int i, j
    cdef double m, total, val
    for i in range(t):
        m = s[i * t]
        for j in range(1, t):
            if s[i * t + j] > m:
                m = s[i * t + j]
        total = 0.0
        for j in range(t):
            val = exp(s[i * t + j] - m)
            s[i * t + j] = val
            total += val
        for j in range(t):
            s[i * t + j] /= total


def attention_forward(double[:, :, ::1] q, double[:, :, ::1] k,
                      double[:, :, ::1] v, double scale, bint need_probs=True):
    cdef int h = q.shape[0]
    cdef int t = q.shape[1]
    cdef int a = q.shape[2]
    cdef cnp.ndarray out = np.empty((h, t, a), dtype=np.float64)
    cdef cnp.ndarray probs
    cdef double[:, :, ::1] ov = out
    cdef double[:, :, ::1] pv
    cdef double[:, ::1] scratch
    cdef double* pptr
    cdef int i
    if need_probs:
        probs = np.empty((h, t, t), dtype=np.float64)
        pv = probs
    else:
        probs = None
        scratch = np.empty((t, t), dtype=np.float64)
    with nogil:
        for i in range(h):
            if need_probs:
                pptr = &pv[i, 0, 0]
            else:
                pptr = &scratch[0, 0]
            _gemm_abt(&q[i, 0, 0], &k[i, 0, 0], pptr, t, t, a, scale)
            _softmax_rows(pptr, t)
            _gemm_ab(pptr, &v[i, 0, 0], &ov[i, 0, 0], t, a, t, 1.0)
    return out, probs


def attention_backward(double[:, :, ::1] q, double[:, :, ::1] k,
                       double[:, :, ::1] v, double[:, :, ::1] probs,
                       double[:, :, ::1] dout, double scale):
    cdef int h = q.shape[0]
    cdef int t = q.shape[1]
    cdef int a = q.shape[2]
    cdef cnp.ndarray dq = np.empty((h, t, a), dtype=np.float64)
    cdef cnp.ndarray dk = np.empty((h, t, a), dtype=np.float64)
    cdef cnp.ndarray dv = np.empty((h, t, a), dtype=np.float64)
    cdef double[:, :, ::1] dqv = dq
    cdef double[:, :, ::1] dkv = dk
    cdef double[:, :, ::1] dvv = dv
    cdef double[:, ::1] ds = np.empty((t, t), dtype=np.float64)
    cdef int i, r, c
    cdef double rowdot
    with nogil:
        for i in range(h):
            # dV = P^T @ dOut
            _gemm_atb(&probs[i, 0, 0], &dout[i, 0, 0], &dvv[i, 0, 0], t, a, t, 1.0)
            # dP = dOut @ V^T, then dS = P * (dP - rowsum(dP * P)) in place
            _gemm_abt(&dout[i, 0, 0], &v[i, 0, 0], &ds[0, 0], t, t, a, 1.0)
            for r in range(t):
                rowdot = 0.0
                for c in range(t):
                    rowdot += ds[r, c] * probs[i, r, c]
                for c in range(t):
                    ds[r, c] = probs[i, r, c] * (ds[r, c] - rowdot)
            _gemm_ab(&ds[0, 0], &k[i, 0, 0], &dqv[i, 0, 0], t, a, t, scale)
            _gemm_atb(&ds[0, 0], &q[i, 0, 0], &dkv[i, 0, 0], t, a, t, scale)
    return dq, dk, dv
