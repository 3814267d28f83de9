"""Pure numpy block kernels, batched over blocks of equal size."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class BlockFactorError(np.linalg.LinAlgError):
    def __init__(self, block):
        super().__init__(f"block {block} is not positive definite")
        self.block = int(block)


def _groups(sizes):
    for s in np.unique(sizes):
        yield int(s), np.flatnonzero(sizes == s)


def factorize(values, vptr, sizes):
    """Lower Cholesky factor of every block, same flat layout as ``values``."""
    L = np.zeros_like(values)
    for s, ids in _groups(sizes):
        idx = vptr[ids][:, None] + np.arange(s * s)
        blocks = values[idx].reshape(-1, s, s)
        try:
            L[idx] = np.linalg.cholesky(blocks).reshape(len(ids), -1)
        except np.linalg.LinAlgError:
            for b, blk in zip(ids, blocks):
                if np.any(np.linalg.eigvalsh(blk) <= 0):
                    raise BlockFactorError(b) from None
            raise
    return L


def block_inverse(L, vptr, sizes):
    inv = np.empty_like(L)
    for s, ids in _groups(sizes):
        idx = vptr[ids][:, None] + np.arange(s * s)
        Linv = np.linalg.inv(L[idx].reshape(-1, s, s))
        inv[idx] = np.einsum("bki,bkj->bij", Linv, Linv).reshape(len(ids), -1)
    return inv


def block_solve(L, vptr, ptr, dofs, x):
    sizes = np.diff(ptr)
    y = np.zeros(np.shape(x), dtype=float)
    for s, ids in _groups(sizes):
        idx = vptr[ids][:, None] + np.arange(s * s)
        Lb = L[idx].reshape(-1, s, s)
        rows = dofs[ptr[ids][:, None] + np.arange(s)]
        rhs = np.asarray(x)[rows][..., None]
        z = np.linalg.solve(Lb, rhs)
        y[rows] = np.linalg.solve(np.swapaxes(Lb, 1, 2), z)[..., 0]
    return y


def inverse_matrix(L, vptr, ptr, dofs, n):
    sizes = np.diff(ptr)
    inv = block_inverse(L, vptr, sizes)
    rep = np.repeat(np.arange(len(sizes)), sizes * sizes)
    local = np.arange(len(inv)) - vptr[rep]
    i = dofs[ptr[rep] + local // sizes[rep]]
    j = dofs[ptr[rep] + local % sizes[rep]]
    return sp.csr_matrix((inv, (i, j)), shape=(n, n))


def schur(L, vptr, ptr, dofs, Bt, npressure):
    """Triplets of B A^{-1} B^T given Bt = B^T in CSR form."""
    Ainv = inverse_matrix(L, vptr, ptr, dofs, Bt.shape[0])
    S = (Bt.T @ (Ainv @ Bt)).tocoo()
    return S.row.astype(np.int64), S.col.astype(np.int64), S.data
