# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must stay identical to ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    MAX_DIMS = 8


def hilbert_keys(const cnp.int64_t[:, ::1] coords, int bits):
    """Hilbert index of each row of ``coords`` (Skilling's transpose method)."""
    cdef Py_ssize_t npts = coords.shape[0]
    cdef int n = <int>coords.shape[1]
    if n > MAX_DIMS:
        raise ValueError(f"at most {MAX_DIMS} dimensions supported")
    if bits * n > 63:
        raise ValueError("index does not fit in 63 bits")
    out = np.empty(npts, dtype=np.int64)
    cdef cnp.int64_t[::1] keys = out
    cdef cnp.int64_t X[MAX_DIMS]
    cdef cnp.int64_t M, P, Q, t, key
    cdef Py_ssize_t p
    cdef int i, b
    M = (<cnp.int64_t>1) << (bits - 1)
    with nogil:
        for p in range(npts):
            for i in range(n):
                X[i] = coords[p, i]
            Q = M
            while Q > 1:
                P = Q - 1
                for i in range(n):
                    if X[i] & Q:
                        X[0] ^= P
                    else:
                        t = (X[0] ^ X[i]) & P
                        X[0] ^= t
                        X[i] ^= t
                Q >>= 1
            for i in range(1, n):
                X[i] ^= X[i - 1]
            t = 0
            Q = M
            while Q > 1:
                if X[n - 1] & Q:
                    t ^= Q - 1
                Q >>= 1
            for i in range(n):
                X[i] ^= t
            key = 0
            for b in range(bits - 1, -1, -1):
                for i in range(n):
                    key = (key << 1) | ((X[i] >> b) & 1)
            keys[p] = key
    return out


def block_sparse_attention(
    const float[:, ::1] q,
    const float[:, ::1] k,
    const float[:, ::1] v,
    const cnp.uint8_t[:, ::1] mask,
    Py_ssize_t block_size,
    double scale,
):
    """Masked softmax attention; keys outside selected blocks get -inf logits.

    Per query block, logits against each selected key block come from one
    dgemm on the contiguous key rows (no gather), the row softmax runs in
    place, and a second dgemm per key block accumulates the values.
    Arithmetic is float64 throughout.
    """
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t nblocks = mask.shape[0]
    cdef int d = <int>q.shape[1]
    cdef int dv = <int>v.shape[1]
    cdef int bs = <int>block_size
    out = np.empty((n, dv), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef double[:, ::1] qd = np.asarray(q, dtype=np.float64)
    cdef double[:, ::1] kd = np.asarray(k, dtype=np.float64)
    cdef double[:, ::1] vd = np.asarray(v, dtype=np.float64)
    cdef double *logits = <double *>malloc(block_size * n * sizeof(double))
    cdef double *acc = <double *>malloc(block_size * dv * sizeof(double))
    cdef double *z = <double *>malloc(block_size * sizeof(double))
    cdef Py_ssize_t *starts = <Py_ssize_t *>malloc(nblocks * sizeof(Py_ssize_t))
    cdef int *widths = <int *>malloc(nblocks * sizeof(int))
    if not (logits and acc and z and starts and widths):
        free(logits); free(acc); free(z); free(starts); free(widths)
        raise MemoryError()
    cdef Py_ssize_t u, kb, i, j, c, r, nsel, q0
    cdef int rows, width, total, pos
    cdef double m, s, zero = 0.0, one = 1.0
    cdef double *row
    cdef char tr = b'T'
    cdef char nt = b'N'
    try:
        with nogil:
            for u in range(nblocks):
                q0 = u * block_size
                rows = <int>(min(q0 + block_size, n) - q0)
                nsel = 0
                total = 0
                for kb in range(nblocks):
                    if mask[u, kb]:
                        starts[nsel] = kb * block_size
                        widths[nsel] = <int>(min((kb + 1) * block_size, n) - kb * block_size)
                        total += widths[nsel]
                        nsel += 1
                # logits (rows x total, row-major) = scale * Q_u K_sel^T
                pos = 0
                for r in range(nsel):
                    width = widths[r]
                    dgemm(&tr, &nt, &width, &rows, &d, &scale, &kd[starts[r], 0], &d,
                          &qd[q0, 0], &d, &zero, logits + pos, &total)
                    pos += width
                for i in range(rows):
                    row = logits + i * total
                    m = -INFINITY
                    for j in range(total):
                        if row[j] > m:
                            m = row[j]
                    s = 0.0
                    for j in range(total):
                        row[j] = exp(row[j] - m)
                        s += row[j]
                    z[i] = s
                # acc (rows x dv, row-major) = P V_sel
                pos = 0
                for r in range(nsel):
                    width = widths[r]
                    dgemm(&nt, &nt, &dv, &rows, &width, &one, &vd[starts[r], 0], &dv,
                          logits + pos, &total, &one if r else &zero, acc, &dv)
                    pos += width
                for i in range(rows):
                    for c in range(dv):
                        o[q0 + i, c] = <float>(acc[i * dv + c] / z[i])
    finally:
        free(logits); free(acc); free(z); free(starts); free(widths)
    return out
