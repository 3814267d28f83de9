# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled block kernels: per-block Cholesky, block solves and the Schur product."""
import numpy as np
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free


class BlockFactorError(np.linalg.LinAlgError):
    def __init__(self, block):
        super().__init__(f"block {block} is not positive definite")
        self.block = int(block)


cdef int _chol(double[::1] L, long off, long s) noexcept nogil:
    cdef long i, j, m
    cdef double acc
    for j in range(s):
        acc = L[off + j * s + j]
        for m in range(j):
            acc -= L[off + j * s + m] * L[off + j * s + m]
        if acc <= 0.0:
            return 1
        acc = sqrt(acc)
        L[off + j * s + j] = acc
        for i in range(j + 1, s):
            L[off + i * s + j] = L[off + i * s + j]
            for m in range(j):
                L[off + i * s + j] -= L[off + i * s + m] * L[off + j * s + m]
            L[off + i * s + j] /= acc
        for i in range(j):
            L[off + i * s + j] = 0.0
    return 0


cdef void _cho_solve(const double[::1] L, long off, long s, double* x) noexcept nogil:
    cdef long i, m
    for i in range(s):
        for m in range(i):
            x[i] -= L[off + i * s + m] * x[m]
        x[i] /= L[off + i * s + i]
    for i in range(s - 1, -1, -1):
        for m in range(i + 1, s):
            x[i] -= L[off + m * s + i] * x[m]
        x[i] /= L[off + i * s + i]


def factorize(double[::1] values, long[::1] vptr, long[::1] sizes):
    cdef long nb = sizes.shape[0]
    cdef long b
    cdef int bad = -1
    out = np.array(values, dtype=float, copy=True)
    cdef double[::1] L = out
    with nogil:
        for b in range(nb):
            if _chol(L, vptr[b], sizes[b]):
                bad = b
                break
    if bad >= 0:
        raise BlockFactorError(bad)
    return out


def block_solve(const double[::1] L, long[::1] vptr, long[::1] ptr, long[::1] dofs, const double[::1] x):
    cdef long nb = ptr.shape[0] - 1
    cdef long b, i, s, smax = 0
    out = np.zeros(x.shape[0])
    cdef double[::1] y = out
    for b in range(nb):
        if ptr[b + 1] - ptr[b] > smax:
            smax = ptr[b + 1] - ptr[b]
    cdef double* buf = <double*> malloc(max(smax, 1) * sizeof(double))
    try:
        with nogil:
            for b in range(nb):
                s = ptr[b + 1] - ptr[b]
                for i in range(s):
                    buf[i] = x[dofs[ptr[b] + i]]
                _cho_solve(L, vptr[b], s, buf)
                for i in range(s):
                    y[dofs[ptr[b] + i]] = buf[i]
    finally:
        free(buf)
    return out


def block_inverse(const double[::1] L, long[::1] vptr, long[::1] sizes):
    cdef long nb = sizes.shape[0]
    cdef long b, i, j, s, smax = 1
    out = np.zeros(L.shape[0])
    cdef double[::1] inv = out
    for b in range(nb):
        if sizes[b] > smax:
            smax = sizes[b]
    cdef double* col = <double*> malloc(smax * sizeof(double))
    try:
        with nogil:
            for b in range(nb):
                s = sizes[b]
                for j in range(s):
                    for i in range(s):
                        col[i] = 1.0 if i == j else 0.0
                    _cho_solve(L, vptr[b], s, col)
                    for i in range(s):
                        inv[vptr[b] + i * s + j] = col[i]
    finally:
        free(col)
    return out


def schur(const double[::1] L, long[::1] vptr, long[::1] ptr, long[::1] dofs, Bt, long npressure):
    """Triplets of B A^{-1} B^T block by block; ``Bt`` is B^T in CSR form."""
    cdef long[::1] bp = np.ascontiguousarray(Bt.indptr, dtype=np.int64)
    cdef long[::1] bi = np.ascontiguousarray(Bt.indices, dtype=np.int64)
    cdef const double[::1] bv = np.ascontiguousarray(Bt.data, dtype=float)
    cdef long nb = ptr.shape[0] - 1
    cdef long b, i, j, m, r, c, s, nloc, t, total = 0, smax = 1, cmax = 1
    cdef long[::1] mark = np.full(npressure, -1, dtype=np.int64)
    cdef long[::1] cols = np.empty(npressure, dtype=np.int64)

    # pass 1: sizes
    for b in range(nb):
        s = ptr[b + 1] - ptr[b]
        nloc = 0
        for i in range(s):
            r = dofs[ptr[b] + i]
            for m in range(bp[r], bp[r + 1]):
                c = bi[m]
                if mark[c] != b:
                    mark[c] = b
                    nloc += 1
        total += nloc * nloc
        if s > smax:
            smax = s
        if nloc > cmax:
            cmax = nloc
    rows_o = np.empty(total, dtype=np.int64)
    cols_o = np.empty(total, dtype=np.int64)
    vals_o = np.empty(total)
    cdef long[::1] ro = rows_o
    cdef long[::1] co = cols_o
    cdef double[::1] vo = vals_o
    mark[:] = -1
    cdef double* D = <double*> malloc(smax * cmax * sizeof(double))
    cdef double* X = <double*> malloc(smax * cmax * sizeof(double))
    cdef double* tmp = <double*> malloc(smax * sizeof(double))
    cdef double acc
    t = 0
    try:
        with nogil:
            for b in range(nb):
                s = ptr[b + 1] - ptr[b]
                nloc = 0
                for i in range(s):
                    r = dofs[ptr[b] + i]
                    for m in range(bp[r], bp[r + 1]):
                        c = bi[m]
                        if mark[c] < 0:
                            mark[c] = nloc
                            cols[nloc] = c
                            nloc += 1
                for i in range(s * nloc):
                    D[i] = 0.0
                for i in range(s):
                    r = dofs[ptr[b] + i]
                    for m in range(bp[r], bp[r + 1]):
                        D[i * nloc + mark[bi[m]]] += bv[m]
                # X = A_b^{-1} D column by column
                for j in range(nloc):
                    for i in range(s):
                        tmp[i] = D[i * nloc + j]
                    _cho_solve(L, vptr[b], s, tmp)
                    for i in range(s):
                        X[i * nloc + j] = tmp[i]
                for i in range(nloc):
                    for j in range(nloc):
                        acc = 0.0
                        for m in range(s):
                            acc = acc + D[m * nloc + i] * X[m * nloc + j]
                        ro[t] = cols[i]
                        co[t] = cols[j]
                        vo[t] = acc
                        t += 1
                for i in range(nloc):
                    mark[cols[i]] = -1
    finally:
        free(D)
        free(X)
        free(tmp)
    return rows_o, cols_o, vals_o


def inverse_matrix(const double[::1] L, long[::1] vptr, long[::1] ptr, long[::1] dofs, long n):
    import scipy.sparse as sp
    sizes = np.diff(np.asarray(ptr))
    inv = block_inverse(L, vptr, sizes)
    rep = np.repeat(np.arange(len(sizes)), sizes * sizes)
    local = np.arange(len(inv)) - np.asarray(vptr)[rep]
    d = np.asarray(dofs)
    p = np.asarray(ptr)
    i = d[p[rep] + local // sizes[rep]]
    j = d[p[rep] + local % sizes[rep]]
    return sp.csr_matrix((inv, (i, j)), shape=(n, n))
