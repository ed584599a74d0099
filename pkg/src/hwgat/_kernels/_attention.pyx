# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled block attention core.

Mirrors fallback.py exactly.  The matmul-shaped pieces (logits, value
aggregation, and the four backward products) run through BLAS gemm one
(block, head) at a time; the edge bias, masked softmax, threshold dropout,
and softmax backward stay fused scalar passes, so nothing allocates beyond
two n x n scratch buffers and the returned probs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expf
from scipy.linalg.cython_blas cimport dgemm, sgemm


ctypedef fused real:
    float
    double

cdef char _OP_N = ord('N')
cdef char _OP_T = ord('T')


cdef inline void _rm_gemm(char opa, char opb, int m, int n, int kdim,
                          double alpha, real* a, int lda, real* b, int ldb,
                          real* c, int ldc) noexcept nogil:
    """Row-major C(m x n) = alpha * opa(A) @ opb(B), overwriting C.

    Fortran gemm sees each row-major buffer as its own transpose, so the
    operands swap and keep their trans flags; ld* are row lengths.
    """
    cdef real al = <real> alpha
    cdef real be = <real> 0.0
    if real is float:
        sgemm(&opb, &opa, &n, &m, &kdim, <float*> &al, <float*> b, &ldb,
              <float*> a, &lda, <float*> &be, <float*> c, &ldc)
    else:
        dgemm(&opb, &opa, &n, &m, &kdim, <double*> &al, <double*> b, &ldb,
              <double*> a, &lda, <double*> &be, <double*> c, &ldc)


def attention_forward(real[:, :, :, ::1] q, real[:, :, :, ::1] k,
                      real[:, :, :, ::1] v, real[:, :, ::1] bias,
                      cnp.int64_t[::1] bias_idx, double scale,
                      mult_mask=None, gamma=None, keep_mask=None):
    """Masked block attention; returns (out, pre-dropout softmax probs)."""
    cdef Py_ssize_t nb = q.shape[0], heads = q.shape[1]
    cdef int n = <int> q.shape[2], hd = <int> q.shape[3]

    dtype = np.asarray(q).dtype
    out_arr = np.empty((nb, heads, n, hd), dtype=dtype)
    probs_arr = np.empty((nb, heads, n, n), dtype=dtype)
    logits_arr = np.empty((n, n), dtype=dtype)
    kept_arr = np.empty((n, n), dtype=dtype)

    cdef real[:, :, :, ::1] out = out_arr
    cdef real[:, :, :, ::1] probs = probs_arr
    cdef real[:, ::1] logits = logits_arr
    cdef real[:, ::1] kept_probs = kept_arr

    cdef bint has_mult = mult_mask is not None
    cdef real[:, :, ::1] mm = mult_mask if has_mult else bias
    cdef bint has_gamma = gamma is not None
    cdef double g = gamma if has_gamma else 0.0
    cdef bint has_keep = keep_mask is not None
    cdef cnp.uint8_t[:, :, :, ::1] km = (
        keep_mask if has_keep else np.zeros((1, 1, 1, 1), dtype=np.uint8))
    cdef bint dropping = has_keep or has_gamma

    cdef Py_ssize_t b, u, i, j, bi
    cdef double acc, mx, total, e
    cdef real p, inv

    with nogil:
        for b in range(nb):
            bi = bias_idx[b]
            for u in range(heads):
                _rm_gemm(_OP_N, _OP_T, n, n, hd, scale,
                         &q[b, u, 0, 0], hd, &k[b, u, 0, 0], hd,
                         &logits[0, 0], n)
                for i in range(n):
                    if has_mult:
                        for j in range(n):
                            logits[i, j] = <real> (
                                logits[i, j] * mm[bi, i, j] + bias[bi, i, j])
                    else:
                        for j in range(n):
                            logits[i, j] += bias[bi, i, j]
                    mx = logits[i, 0]
                    for j in range(1, n):
                        if logits[i, j] > mx:
                            mx = logits[i, j]
                    total = 0.0
                    for j in range(n):
                        if real is float:
                            e = expf(<float> (logits[i, j] - mx))
                        else:
                            e = exp(logits[i, j] - mx)
                        probs[b, u, i, j] = <real> e
                        total += e
                    inv = <real> (1.0 / total)
                    for j in range(n):
                        probs[b, u, i, j] *= inv
                if dropping:
                    for i in range(n):
                        for j in range(n):
                            p = probs[b, u, i, j]
                            if has_keep:
                                if km[b, u, i, j] == 0:
                                    p = 0.0
                            elif p > g:
                                p = 0.0
                            kept_probs[i, j] = p
                    _rm_gemm(_OP_N, _OP_N, n, hd, n, 1.0,
                             &kept_probs[0, 0], n, &v[b, u, 0, 0], hd,
                             &out[b, u, 0, 0], hd)
                else:
                    _rm_gemm(_OP_N, _OP_N, n, hd, n, 1.0,
                             &probs[b, u, 0, 0], n, &v[b, u, 0, 0], hd,
                             &out[b, u, 0, 0], hd)
    return out_arr, probs_arr


def attention_backward(real[:, :, :, ::1] dout, real[:, :, :, ::1] q,
                       real[:, :, :, ::1] k, real[:, :, :, ::1] v,
                       real[:, :, :, ::1] probs, real[:, :, ::1] bias,
                       cnp.int64_t[::1] bias_idx, double scale,
                       mult_mask=None, gamma=None, keep_mask=None):
    """Gradients of attention_forward w.r.t. q, k, v and each bias slice."""
    cdef Py_ssize_t nb = q.shape[0], heads = q.shape[1]
    cdef int n = <int> q.shape[2], hd = <int> q.shape[3]

    dtype = np.asarray(q).dtype
    dq_arr = np.empty((nb, heads, n, hd), dtype=dtype)
    dk_arr = np.empty((nb, heads, n, hd), dtype=dtype)
    dv_arr = np.empty((nb, heads, n, hd), dtype=dtype)
    dbias_arr = np.zeros((bias.shape[0], n, n), dtype=dtype)
    dl_arr = np.empty((n, n), dtype=dtype)
    kept_arr = np.empty((n, n), dtype=dtype)

    cdef real[:, :, :, ::1] dq = dq_arr
    cdef real[:, :, :, ::1] dk = dk_arr
    cdef real[:, :, :, ::1] dv = dv_arr
    cdef real[:, :, ::1] dbias = dbias_arr
    cdef real[:, ::1] dl = dl_arr
    cdef real[:, ::1] kept_probs = kept_arr

    cdef bint has_mult = mult_mask is not None
    cdef real[:, :, ::1] mm = mult_mask if has_mult else bias
    cdef bint has_gamma = gamma is not None
    cdef double g = gamma if has_gamma else 0.0
    cdef bint has_keep = keep_mask is not None
    cdef cnp.uint8_t[:, :, :, ::1] km = (
        keep_mask if has_keep else np.zeros((1, 1, 1, 1), dtype=np.uint8))

    cdef Py_ssize_t b, u, i, j, bi
    cdef double row
    cdef real p, grad
    cdef bint kept

    with nogil:
        for b in range(nb):
            bi = bias_idx[b]
            for u in range(heads):
                # dl starts as d(applied probs): dout . v per (i, j)
                _rm_gemm(_OP_N, _OP_T, n, n, hd, 1.0,
                         &dout[b, u, 0, 0], hd, &v[b, u, 0, 0], hd,
                         &dl[0, 0], n)
                for i in range(n):
                    row = 0.0
                    for j in range(n):
                        p = probs[b, u, i, j]
                        if has_keep:
                            kept = km[b, u, i, j] != 0
                        elif has_gamma:
                            kept = p <= g
                        else:
                            kept = True
                        if kept:
                            kept_probs[i, j] = p
                        else:
                            kept_probs[i, j] = 0.0
                            dl[i, j] = 0.0
                        row += dl[i, j] * p
                    for j in range(n):
                        p = probs[b, u, i, j]
                        grad = <real> (p * (dl[i, j] - row))
                        dbias[bi, i, j] += grad
                        if has_mult:
                            grad *= mm[bi, i, j]
                        dl[i, j] = grad
                _rm_gemm(_OP_T, _OP_N, n, hd, n, 1.0,
                         &kept_probs[0, 0], n, &dout[b, u, 0, 0], hd,
                         &dv[b, u, 0, 0], hd)
                _rm_gemm(_OP_N, _OP_N, n, hd, n, scale,
                         &dl[0, 0], n, &k[b, u, 0, 0], hd,
                         &dq[b, u, 0, 0], hd)
                _rm_gemm(_OP_T, _OP_N, n, hd, n, scale,
                         &dl[0, 0], n, &q[b, u, 0, 0], hd,
                         &dk[b, u, 0, 0], hd)
    return dq_arr, dk_arr, dv_arr, dbias_arr
