"""Mass blocks, divergence matrix, right-hand sides and the RT reference system.

Sign convention: ``B[w, v] = +(div v, w)``. The discrete problem reads

    A U - B^T P = G,    B U = F,

with ``G[v] = -<R g, v.n>`` on the Dirichlet boundary and ``F[w] = (f, w)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dofmap import DofMap, NodeBlocks
from .mesh import Mesh, cell_geometry
from .quadrature import gauss_rule, tensor_rule
from .refbasis import (
    EnhancedBasis,
    NodalBasis,
    _legendre_tensor,
    build_pressure_basis,
    facet_points,
    legendre_values,
)


class CoefficientError(ValueError):
    """Raised when the permeability is not SPD at a quadrature node."""


class AssemblyError(RuntimeError):
    pass


@dataclass
class BlockDiagonalMatrix:
    """Symmetric block-diagonal matrix stored block by block.

    Block ``b`` couples ``dofs[ptr[b]:ptr[b+1]]`` and its dense values are
    ``values[vptr[b]:vptr[b+1]]`` in row-major order.
    """

    ptr: np.ndarray
    dofs: np.ndarray
    values: np.ndarray
    n: int

    def __post_init__(self):
        s = np.diff(self.ptr)
        self.vptr = np.concatenate([[0], np.cumsum(s * s)]).astype(np.int64)

    @property
    def sizes(self):
        return np.diff(self.ptr)

    def __len__(self):
        return len(self.ptr) - 1

    def block(self, b):
        s = self.ptr[b + 1] - self.ptr[b]
        return self.values[self.vptr[b] : self.vptr[b + 1]].reshape(s, s)

    def members(self, b):
        return self.dofs[self.ptr[b] : self.ptr[b + 1]]

    def groups(self):
        """Blocks grouped by size: {size: (block ids, dofs (m, s), values (m, s, s))}."""
        out = {}
        sizes = self.sizes
        for s in np.unique(sizes):
            ids = np.flatnonzero(sizes == s)
            dofs = self.dofs[self.ptr[ids][:, None] + np.arange(s)]
            vals = self.values[self.vptr[ids][:, None] + np.arange(s * s)].reshape(-1, s, s)
            out[int(s)] = (ids, dofs, vals)
        return out

    def triplets(self):
        s = self.sizes
        rep = np.repeat(np.arange(len(s)), s * s)
        local = np.arange(len(self.values)) - self.vptr[rep]
        i = local // s[rep]
        j = local % s[rep]
        return self.dofs[self.ptr[rep] + i], self.dofs[self.ptr[rep] + j], self.values.copy()

    def tocsr(self):
        r, c, v = self.triplets()
        return sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    def matvec(self, x):
        return self.tocsr() @ x


def mapped_permeability(DF, J, Kx, check=True):
    """Inverse of the mapped tensor: (1/J) DF^T K^{-1} DF, batched."""
    Kx = np.asarray(Kx, dtype=float)
    if check:
        try:
            np.linalg.cholesky(Kx)
        except np.linalg.LinAlgError as exc:
            raise CoefficientError("permeability is not SPD at a quadrature node") from exc
    Kinv = np.linalg.inv(Kx)
    return np.einsum("...ba,...bc,...cd->...ad", DF, Kinv, DF) / J[..., None, None]


def mapped_tensor(DF, J, Kx):
    """The mapped tensor itself: J DF^{-1} K DF^{-T}."""
    Finv = np.linalg.inv(DF)
    return J[..., None, None] * np.einsum("...ab,...bc,...dc->...ad", Finv, Kx, Finv)


def assemble_mass_blocks(mesh: Mesh, dofmap: DofMap, blocks: NodeBlocks, basis: EnhancedBasis, K, check=True):
    """Gauss-Lobatto velocity mass matrix as node blocks."""
    d = basis.d
    x, DF, J = cell_geometry(mesh, basis.nodes)
    Kinv = mapped_permeability(DF, J, K(x))  # (nc, nn, d, d)
    w = basis.node_weights
    nn = len(w)
    loc = (np.arange(nn)[:, None] * d + np.arange(d)[None, :])  # (nn, d)
    g = dofmap.cell_dofs[:, loc]  # (nc, nn, d)
    s = dofmap.cell_signs[:, loc]
    vals = w[None, :, None, None] * Kinv * s[..., :, None] * s[..., None, :]
    g1 = np.broadcast_to(g[..., :, None], vals.shape)
    g2 = np.broadcast_to(g[..., None, :], vals.shape)
    keep = (g1 >= 0) & (g2 >= 0)
    g1, g2, vals = g1[keep], g2[keep], vals[keep]
    b = blocks.block_of[g1]
    if np.any(b != blocks.block_of[g2]):
        raise AssemblyError("mass entry couples two quadrature nodes")
    sizes = blocks.sizes
    vptr = np.concatenate([[0], np.cumsum(sizes * sizes)])
    slot = vptr[b] + blocks.pos[g1] * sizes[b] + blocks.pos[g2]
    values = np.bincount(slot, weights=vals, minlength=vptr[-1])
    A = BlockDiagonalMatrix(blocks.ptr, blocks.dofs, values, dofmap.ndofs)
    if check:
        check_spd_blocks(A)
    return A


def check_spd_blocks(A: BlockDiagonalMatrix):
    for s, (ids, _, vals) in A.groups().items():
        try:
            np.linalg.cholesky(vals)
        except np.linalg.LinAlgError:
            for b, v in zip(ids, vals):
                try:
                    np.linalg.cholesky(v)
                except np.linalg.LinAlgError:
                    raise AssemblyError(f"mass block {b} (size {s}) is not SPD") from None


def local_divergence(basis: NodalBasis):
    """(div v_l, w_p) on the reference cell, shape (npl, nloc)."""
    pb = build_pressure_basis(basis.k, basis.d)
    rule = tensor_rule(gauss_rule(basis.k + 1), basis.d)
    return np.einsum("q,qp,ql->pl", rule.weights, pb.eval(rule.nodes), basis.div(rule.nodes))


def assemble_div(mesh: Mesh, dofmap: DofMap, basis: NodalBasis):
    Bloc = local_divergence(basis)
    npl, nloc = Bloc.shape
    nc = mesh.ncells
    rows = np.broadcast_to(dofmap.cell_pressure[:, :, None], (nc, npl, nloc))
    cols = np.broadcast_to(dofmap.cell_dofs[:, None, :], (nc, npl, nloc))
    vals = Bloc[None] * dofmap.cell_signs[:, None, :]
    keep = (cols >= 0) & (Bloc[None] != 0)
    return sp.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(dofmap.npressure, dofmap.ndofs)
    )


def _facet_tests(d, deg, pts):
    """Legendre basis of R^deg on the reference facet and squared norms."""
    if d == 2:
        T = legendre_values(deg, pts[:, 0])
        norms = 2.0 / (2 * np.arange(deg + 1) + 1)
    else:
        T = _legendre_tensor([deg] * (d - 1), pts)
        n1 = 2.0 / (2 * np.arange(deg + 1) + 1)
        norms = np.outer(n1, n1).ravel()
    return T, norms


def dirichlet_facets(mesh: Mesh):
    """(cell, local facet) of every Dirichlet boundary facet."""
    top = mesh.facets
    tags = mesh.boundary_tags()
    ids = [f for f, t in enumerate(tags) if t == "D"]
    return top.cells[ids, 0], top.local[ids, 0]


def project_dirichlet(g, mesh: Mesh, k: int, nq: int | None = None):
    """Reference-facet L2 projection of g onto R^{k-1}.

    Returns (cells, local facets, coefficients) with coefficients in the
    Legendre basis of R^{k-1} on [-1,1]^{d-1}.
    """
    d = mesh.dim
    cells, lf = dirichlet_facets(mesh)
    rule = tensor_rule(gauss_rule(nq or k + 3), d - 1)
    T, norms = _facet_tests(d, k - 1, rule.nodes)
    coef = np.zeros((len(cells), T.shape[1]))
    for f in range(2 * d):
        sel = np.flatnonzero(lf == f)
        if len(sel) == 0:
            continue
        x, _, _ = cell_geometry_subset(mesh, cells[sel], facet_points(d, f, rule.nodes))
        gv = g(x)  # (m, nq)
        coef[sel] = np.einsum("q,qt,mq->mt", rule.weights, T, gv) / norms
    return cells, lf, coef


def eval_dirichlet_projection(d, k, coef, pts):
    T, _ = _facet_tests(d, k - 1, pts)
    return coef @ T.T


def cell_geometry_subset(mesh: Mesh, cells, xi):
    sub = Mesh(mesh.vertices, mesh.cells[cells])
    return cell_geometry(sub, xi)


def assemble_rhs(mesh: Mesh, dofmap: DofMap, basis: NodalBasis, case, quad_order: int | None = None):
    """(G, F): Dirichlet velocity load and pressure source."""
    d, k = basis.d, basis.k
    nq = quad_order or k + 3
    G = np.zeros(dofmap.ndofs)
    cells, lf, coef = project_dirichlet(case.g, mesh, k, nq)
    frule = tensor_rule(gauss_rule(k + 1), d - 1)
    for f in range(2 * d):
        sel = np.flatnonzero(lf == f)
        if len(sel) == 0:
            continue
        a, s = divmod(f, 2)
        dofs = np.flatnonzero(basis.is_facet_dof(f))
        vn = (2.0 * s - 1.0) * basis.eval(facet_points(d, f, frule.nodes))[:, dofs, a]
        gv = eval_dirichlet_projection(d, k, coef[sel], frule.nodes)  # (m, nq)
        loads = -np.einsum("q,mq,ql->ml", frule.weights, gv, vn)
        gl = dofmap.cell_dofs[cells[sel]][:, dofs]
        sg = dofmap.cell_signs[cells[sel]][:, dofs]
        ok = gl >= 0
        G += np.bincount(gl[ok], weights=(sg * loads)[ok], minlength=dofmap.ndofs)

    pb = build_pressure_basis(k, d)
    rule = tensor_rule(gauss_rule(nq), d)
    x, _, J = cell_geometry(mesh, rule.nodes)
    fw = case.f(x) * J * rule.weights[None, :]
    Floc = fw @ pb.eval(rule.nodes)  # (nc, npl)
    F = np.zeros(dofmap.npressure)
    F[dofmap.cell_pressure] = Floc
    return G, F


def assemble_rt_exact(mesh: Mesh, dofmap: DofMap, basis: NodalBasis, K, quad_order: int | None = None):
    """Mass and divergence matrices of the RT comparison method, Gauss quadrature."""
    d = basis.d
    nq = quad_order or basis.k + 3
    rule = tensor_rule(gauss_rule(nq), d)
    x, DF, J = cell_geometry(mesh, rule.nodes)
    Kinv = mapped_permeability(DF, J, K(x))
    V = basis.eval(rule.nodes)  # (q, l, d)
    Aloc = np.einsum("q,eqab,qla,qmb->elm", rule.weights, Kinv, V, V, optimize=True)
    Aloc *= dofmap.cell_signs[:, :, None] * dofmap.cell_signs[:, None, :]
    r = np.broadcast_to(dofmap.cell_dofs[:, :, None], Aloc.shape)
    c = np.broadcast_to(dofmap.cell_dofs[:, None, :], Aloc.shape)
    keep = (r >= 0) & (c >= 0)
    A = sp.csr_matrix((Aloc[keep], (r[keep], c[keep])), shape=(dofmap.ndofs, dofmap.ndofs))
    return A, assemble_div(mesh, dofmap, basis)


def write_triplets(path, M, comment=""):
    """Plain text 'i j value' lines with a 'rows cols nnz' header."""
    M = sp.coo_matrix(M)
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def read_triplets(path):
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    nr, nc, nnz = (int(t) for t in lines[0].split())
    data = np.array([ln.split() for ln in lines[1 : 1 + nnz]], dtype=float).reshape(-1, 3)
    return sp.csr_matrix(
        (data[:, 2], (data[:, 0].astype(np.int64), data[:, 1].astype(np.int64))), shape=(nr, nc)
    )


def export_system(prefix, A: BlockDiagonalMatrix, B, G, F):
    """Write A blocks, B and the right-hand sides as triplet files."""
    r, c, v = A.triplets()
    write_triplets(f"{prefix}_A.txt", sp.coo_matrix((v, (r, c)), shape=(A.n, A.n)), "velocity mass blocks")
    write_triplets(f"{prefix}_B.txt", B, "divergence, rows = pressure")
    rhs = np.concatenate([G, F])
    n = len(rhs)
    rhs = sp.coo_matrix((rhs, (np.arange(n), np.zeros(n, dtype=np.int64))), shape=(n, 1))
    write_triplets(f"{prefix}_rhs.txt", rhs, f"G (first {len(G)}) then F")
