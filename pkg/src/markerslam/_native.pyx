# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numeric kernels; same contracts as ``_fallback.py``."""

from libc.math cimport sqrt, isfinite

ctypedef long long idx_t


def scatter_add(double[::1] buf, idx_t[::1] idx, double[::1] vals):
    cdef Py_ssize_t k, n = idx.shape[0]
    for k in range(n):
        buf[idx[k]] += vals[k]


cdef int _chol_inplace(double* D, int s):
    # lower Cholesky of the s x s row-major block; upper part zeroed
    cdef int i, j, k
    cdef double acc
    for j in range(s):
        acc = D[j * s + j]
        for k in range(j):
            acc -= D[j * s + k] * D[j * s + k]
        if not (acc > 0.0) or not isfinite(acc):
            return 1
        acc = sqrt(acc)
        D[j * s + j] = acc
        for i in range(j + 1, s):
            for k in range(j):
                D[i * s + j] -= D[i * s + k] * D[j * s + k]
            D[i * s + j] /= acc
        for i in range(j + 1, s):
            D[j * s + i] = 0.0
    return 0


def block_cholesky(double[::1] buf, idx_t[::1] sizes, idx_t[::1] col_ptr, idx_t[::1] blk_row,
                   idx_t[::1] blk_off, idx_t[::1] upd_ptr, idx_t[::1] upd_a, idx_t[::1] upd_b,
                   idx_t[::1] upd_dst):
    cdef Py_ssize_t n = sizes.shape[0]
    cdef Py_ssize_t p, b, u, i, j, k
    cdef int sp, sr, sa, sb
    cdef double* base = &buf[0]
    cdef double* D
    cdef double* B
    cdef double* A
    cdef double* C
    cdef double acc
    for p in range(n):
        sp = <int>sizes[p]
        D = base + blk_off[col_ptr[p]]
        if _chol_inplace(D, sp):
            return p + 1
        for b in range(col_ptr[p] + 1, col_ptr[p + 1]):
            sr = <int>sizes[blk_row[b]]
            B = base + blk_off[b]
            # solve X L^T = B row by row (forward substitution)
            for i in range(sr):
                for j in range(sp):
                    acc = B[i * sp + j]
                    for k in range(j):
                        acc -= B[i * sp + k] * D[j * sp + k]
                    B[i * sp + j] = acc / D[j * sp + j]
        for u in range(upd_ptr[p], upd_ptr[p + 1]):
            sa = <int>sizes[blk_row[upd_a[u]]]
            sb = <int>sizes[blk_row[upd_b[u]]]
            A = base + blk_off[upd_a[u]]
            B = base + blk_off[upd_b[u]]
            C = base + blk_off[upd_dst[u]]
            for i in range(sa):
                for j in range(sb):
                    acc = 0.0
                    for k in range(sp):
                        acc += A[i * sp + k] * B[j * sp + k]
                    C[i * sb + j] -= acc
    return 0


def block_solve(double[::1] buf, idx_t[::1] sizes, idx_t[::1] col_ptr, idx_t[::1] blk_row,
                idx_t[::1] blk_off, idx_t[::1] scalar_off, double[::1] x):
    cdef Py_ssize_t n = sizes.shape[0]
    cdef Py_ssize_t p, b, i, k, o, ro
    cdef int sp, sr
    cdef double* base = &buf[0] if buf.shape[0] > 0 else NULL
    cdef double* L
    cdef double* B
    cdef double acc
    for p in range(n):
        sp = <int>sizes[p]
        o = scalar_off[p]
        L = base + blk_off[col_ptr[p]]
        for i in range(sp):
            acc = x[o + i]
            for k in range(i):
                acc -= L[i * sp + k] * x[o + k]
            x[o + i] = acc / L[i * sp + i]
        for b in range(col_ptr[p] + 1, col_ptr[p + 1]):
            sr = <int>sizes[blk_row[b]]
            ro = scalar_off[blk_row[b]]
            B = base + blk_off[b]
            for i in range(sr):
                acc = 0.0
                for k in range(sp):
                    acc += B[i * sp + k] * x[o + k]
                x[ro + i] -= acc
    for p in range(n - 1, -1, -1):
        sp = <int>sizes[p]
        o = scalar_off[p]
        for b in range(col_ptr[p] + 1, col_ptr[p + 1]):
            sr = <int>sizes[blk_row[b]]
            ro = scalar_off[blk_row[b]]
            B = base + blk_off[b]
            for k in range(sp):
                acc = 0.0
                for i in range(sr):
                    acc += B[i * sp + k] * x[ro + i]
                x[o + k] -= acc
        L = base + blk_off[col_ptr[p]]
        for i in range(sp - 1, -1, -1):
            acc = x[o + i]
            for k in range(i + 1, sp):
                acc -= L[k * sp + i] * x[o + k]
            x[o + i] = acc / L[i * sp + i]
