import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from mfmfe import kernels
from mfmfe.assembly import BlockDiagonalMatrix, assemble_div
from mfmfe.dofmap import build_dof_map
from mfmfe.refbasis import build_nodal_basis

from conftest import bilinear_mesh

BACKENDS = ["numpy"] + (["cython"] if kernels.compiled is not None else [])


def random_blocks(rng, sizes, n_extra=0):
    sizes = np.asarray(sizes)
    n = int(sizes.sum()) + n_extra
    dofs = rng.permutation(n)[: sizes.sum()]
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    vals = []
    for s in sizes:
        M = rng.normal(size=(s, s))
        vals.append((M @ M.T + s * np.eye(s)).ravel())
    return BlockDiagonalMatrix(ptr, dofs, np.concatenate(vals), n)


def dense(A):
    return A.tocsr().toarray()


@pytest.mark.parametrize("name", BACKENDS)
def test_factor_solve_inverse(name, rng):
    kb = kernels.get_backend(name)
    A = random_blocks(rng, [1, 2, 3, 4, 3, 2, 8, 12, 5])
    L = kb.factorize(A.values.copy(), A.vptr, A.sizes.astype(np.int64))
    x = rng.normal(size=A.n)
    y = kb.block_solve(L, A.vptr, A.ptr, A.dofs, x)
    assert np.allclose(dense(A) @ y, x)
    assert np.allclose(kb.inverse_matrix(L, A.vptr, A.ptr, A.dofs, A.n).toarray(), np.linalg.inv(dense(A)))
    inv = kb.block_inverse(L, A.vptr, A.sizes.astype(np.int64))
    s = A.sizes[2]
    assert np.allclose(inv[A.vptr[2] : A.vptr[3]].reshape(s, s), np.linalg.inv(A.block(2)))


@pytest.mark.parametrize("name", BACKENDS)
def test_schur_matches_dense(name, rng):
    kb = kernels.get_backend(name)
    A = random_blocks(rng, [2, 3, 4, 2, 3])
    B = sp.random(6, A.n, density=0.4, random_state=3, format="csr")
    L = kb.factorize(A.values.copy(), A.vptr, A.sizes.astype(np.int64))
    r, c, v = kb.schur(L, A.vptr, A.ptr, A.dofs, sp.csr_matrix(B.T), 6)
    S = sp.csr_matrix((v, (r, c)), shape=(6, 6)).toarray()
    ref = B.toarray() @ np.linalg.inv(dense(A)) @ B.toarray().T
    assert np.allclose(S, ref)


@pytest.mark.parametrize("name", BACKENDS)
def test_non_spd_block_reported(name):
    kb = kernels.get_backend(name)
    A = BlockDiagonalMatrix(np.array([0, 2, 4]), np.arange(4), np.array([2.0, 0, 0, 2, 1, 3, 3, 1]), 4)
    with pytest.raises(kernels.BlockFactorError) as info:
        kb.factorize(A.values.copy(), A.vptr, A.sizes.astype(np.int64))
    assert info.value.block == 1


@pytest.mark.skipif(kernels.compiled is None, reason="extension not built")
def test_backend_parity_on_mesh_system(rng):
    from mfmfe.assembly import assemble_mass_blocks
    from mfmfe.dofmap import build_node_blocks
    from mfmfe.verify import example1_case

    mesh = bilinear_mesh(4)
    basis = build_nodal_basis(2, 2)
    dm = build_dof_map(mesh, basis)
    A = assemble_mass_blocks(mesh, dm, build_node_blocks(dm, mesh, basis), basis, example1_case().K)
    Bt = sp.csr_matrix(assemble_div(mesh, dm, basis).T)
    out = {}
    for name in ("numpy", "cython"):
        kb = kernels.get_backend(name)
        L = kb.factorize(A.values.copy(), A.vptr, A.sizes.astype(np.int64))
        r, c, v = kb.schur(L, A.vptr, A.ptr, A.dofs, Bt, dm.npressure)
        S = sp.csr_matrix((v, (r, c)), shape=(dm.npressure,) * 2)
        out[name] = (L, S.toarray())
    assert np.allclose(out["numpy"][0], out["cython"][0], rtol=1e-13, atol=1e-14)
    assert np.abs(out["numpy"][1] - out["cython"][1]).max() < 1e-12 * np.abs(out["numpy"][1]).max()


def test_get_backend_names():
    assert kernels.get_backend("numpy") is kernels.fallback
    assert kernels.get_backend() is kernels.backend
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_environment_variable():
    env = dict(os.environ, MFMFE_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "from mfmfe import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
