"""Local velocity elimination, Jacobi PCG and the RT Schur-complement solve.

With ``A U - B^T P = G`` and ``B U = F`` the velocity is
``U = A^{-1}(G + B^T P)`` and the pressure solves

    S P = r,    S = B A^{-1} B^T,    r = F - B A^{-1} G.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .assembly import BlockDiagonalMatrix


class EliminationError(np.linalg.LinAlgError):
    """A node block is not SPD; ``block`` names it."""

    def __init__(self, block, msg=None):
        super().__init__(msg or f"mass block {block} is not positive definite")
        self.block = block


class ConvergenceError(RuntimeError):
    def __init__(self, msg, stats):
        super().__init__(msg)
        self.stats = stats


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    assemble_s: float = 0.0
    solve_s: float = 0.0
    converged: bool = True
    inner_iterations: int = 0


@dataclass
class FactorizedBlocks:
    A: BlockDiagonalMatrix
    L: np.ndarray
    backend: object = field(repr=False, default=None)

    def solve(self, x):
        return self.backend.block_solve(self.L, self.A.vptr, self.A.ptr, self.A.dofs, np.ascontiguousarray(x, dtype=float))

    def inverse(self):
        return self.backend.inverse_matrix(self.L, self.A.vptr, self.A.ptr, self.A.dofs, self.A.n)


def factorize_blocks(A: BlockDiagonalMatrix, backend=None) -> FactorizedBlocks:
    kb = kernels.get_backend(backend)
    try:
        L = kb.factorize(np.ascontiguousarray(A.values), A.vptr, A.sizes.astype(np.int64))
    except kernels.BlockFactorError as exc:
        raise EliminationError(exc.block) from None
    return FactorizedBlocks(A, L, kb)


@dataclass
class ReducedSystem:
    S: sp.csr_matrix
    r: np.ndarray
    factors: FactorizedBlocks
    B: sp.csr_matrix
    G: np.ndarray
    F: np.ndarray


def reduce(factors: FactorizedBlocks, B, G, F) -> ReducedSystem:
    A = factors.A
    Bt = sp.csr_matrix(B.T)
    rows, cols, vals = factors.backend.schur(factors.L, A.vptr, A.ptr, A.dofs, Bt, B.shape[0])
    S = sp.csr_matrix((vals, (rows, cols)), shape=(B.shape[0], B.shape[0]))
    S.sum_duplicates()
    r = F - B @ factors.solve(G)
    return ReducedSystem(S, r, factors, B, G, F)


def solve_cg(S, r, tol=1e-12, maxit=None, x0=None, precond="jacobi", M=None, raise_on_fail=True):
    """Preconditioned CG; stops when ||r - S x|| <= tol ||r||.

    ``S`` may be a matrix or a callable; ``M`` an optional callable
    preconditioner overriding the Jacobi default.
    """
    matvec = S if callable(S) else (lambda v: S @ v)
    n = len(r)
    maxit = maxit or max(10 * n, 100)
    if M is None:
        if precond == "jacobi" and not callable(S):
            dinv = 1.0 / S.diagonal()
            M = lambda v: dinv * v  # noqa: E731
        else:
            M = lambda v: v  # noqa: E731
    t0 = time.perf_counter()
    rnorm0 = float(np.linalg.norm(r))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if rnorm0 == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, solve_s=time.perf_counter() - t0)
    res = r - matvec(x) if x0 is not None else r.copy()
    z = M(res)
    p = z.copy()
    rz = res @ z
    it = 0
    rel = np.linalg.norm(res) / rnorm0
    while rel > tol and it < maxit:
        q = matvec(p)
        alpha = rz / (p @ q)
        x += alpha * p
        res -= alpha * q
        it += 1
        rel = np.linalg.norm(res) / rnorm0
        if rel <= tol:
            break
        z = M(res)
        rz_new = res @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    stats = SolveStats(it, float(rel), solve_s=time.perf_counter() - t0, converged=rel <= tol)
    if not stats.converged and raise_on_fail:
        raise ConvergenceError(f"CG did not reach {tol:g} in {maxit} iterations (residual {rel:.3e})", stats)
    return x, stats


def recover_velocity(factors: FactorizedBlocks, B, G, P):
    return factors.solve(G + B.T @ P)


def solve_rt_schur(A, B, G, F, tol=1e-12, maxit=None, inner_floor=1e-14):
    """PCG on B A^{-1} B^T with inner Jacobi-CG solves for A.

    The preconditioner is the exact inverse of B diag(A)^{-1} B^T (sparse LU).
    Inner solves use tolerance max(1e-2 tol, inner_floor).
    """
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    itol = max(1e-2 * tol, inner_floor)
    inner = {"its": 0}

    def Ainv(v):
        x, st = solve_cg(A, v, tol=itol, raise_on_fail=False)
        inner["its"] += st.iterations
        return x

    Sp = (B @ sp.diags(1.0 / A.diagonal()) @ B.T).tocsc()
    lu = spla.splu(Sp)
    r = F - B @ Ainv(G)
    P, stats = solve_cg(lambda v: B @ Ainv(B.T @ v), r, tol=tol, maxit=maxit, M=lu.solve)
    U = Ainv(G + B.T @ P)
    stats.inner_iterations = inner["its"]
    stats.solve_s = time.perf_counter() - t0
    return P, U, stats


@dataclass
class DiscreteSolution:
    mesh: object
    k: int
    method: str
    basis: object
    dofmap: object
    U: np.ndarray
    P: np.ndarray
    stats: SolveStats
    K: object = None
    system: object = field(default=None, repr=False)


def solve_mfmfe(mesh, case, k, tol=1e-12, quad_order=None, backend=None, keep_system=False):
    """Assemble and solve the MFMFE problem for ``case`` on ``mesh``.

    ``assemble_s`` covers DOF numbering and all assembly; ``solve_s``
    covers block factorisation, reduction, PCG and velocity recovery.
    """
    from .assembly import assemble_div, assemble_mass_blocks, assemble_rhs
    from .dofmap import build_dof_map, build_node_blocks
    from .refbasis import build_nodal_basis

    t0 = time.perf_counter()
    basis = build_nodal_basis(k, mesh.dim)
    dm = build_dof_map(mesh, basis)
    blocks = build_node_blocks(dm, mesh, basis)
    A = assemble_mass_blocks(mesh, dm, blocks, basis, case.K, check=False)
    B = assemble_div(mesh, dm, basis)
    G, F = assemble_rhs(mesh, dm, basis, case, quad_order)
    t1 = time.perf_counter()
    factors = factorize_blocks(A, backend)
    red = reduce(factors, B, G, F)
    P, stats = solve_cg(red.S, red.r, tol=tol)
    U = recover_velocity(factors, B, G, P)
    t2 = time.perf_counter()
    stats.assemble_s = t1 - t0
    stats.solve_s = t2 - t1
    system = {"A": A, "B": B, "G": G, "F": F, "reduced": red, "blocks": blocks} if keep_system else None
    return DiscreteSolution(mesh, k, "mfmfe", basis, dm, U, P, stats, case.K, system)


def solve_rt(mesh, case, k, tol=1e-12, quad_order=None, keep_system=False):
    """RT_{k-1} x Q^{k-1} with Gauss quadrature, solved on its Schur complement."""
    from .assembly import assemble_rhs, assemble_rt_exact
    from .dofmap import build_dof_map
    from .refbasis import build_rt_basis

    t0 = time.perf_counter()
    basis = build_rt_basis(k - 1, mesh.dim)
    dm = build_dof_map(mesh, basis)
    A, B = assemble_rt_exact(mesh, dm, basis, case.K, quad_order)
    G, F = assemble_rhs(mesh, dm, basis, case, quad_order)
    t1 = time.perf_counter()
    P, U, stats = solve_rt_schur(A, B, G, F, tol=tol)
    stats.assemble_s = t1 - t0
    system = {"A": A, "B": B, "G": G, "F": F} if keep_system else None
    return DiscreteSolution(mesh, k, "rt", basis, dm, U, P, stats, case.K, system)
