"""Global velocity/pressure numbering and the node-block partition.

A facet-normal DOF is shared by the two cells on its facet. It is keyed
by the facet and by a canonical index of its node inside the facet. That
index does not depend on which cell looks at it: the facet origin is the
corner with the smallest global vertex id, and the facet axes are ordered
by the ids of the corners next to the origin. The global value is the
owner cell's reference normal component. The other cell applies a sign.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TopologyError, cell_geometry, corner_index, facet_corners
from .refbasis import NodalBasis, build_pressure_basis

SHARED, BOUNDARY, TANGENTIAL, INTERIOR = 0, 1, 2, 3
DOF_CLASSES = ("shared", "boundary", "tangential", "interior")


@dataclass
class DofMap:
    k: int
    d: int
    kind: str
    cell_dofs: np.ndarray  # (nc, nloc) global velocity DOF, -1 if constrained
    cell_signs: np.ndarray  # (nc, nloc) +-1
    ndofs: int
    cell_pressure: np.ndarray  # (nc, npl)
    npressure: int
    dof_class: np.ndarray  # (ndofs,)
    dof_facet: np.ndarray  # (ndofs,) facet id or -1
    n_constrained: int

    @property
    def nlocal(self):
        return self.cell_dofs.shape[1]

    @property
    def free(self):
        return self.cell_dofs >= 0

    def counts(self):
        return {name: int(np.sum(self.dof_class == i)) for i, name in enumerate(DOF_CLASSES)}


def _canonical(gids, idx, n):
    """Canonical multi-index on a sub-entity.

    ``gids`` (m, 2^r) are the global vertex ids of the entity corners in
    tensor order of its r local axes; ``idx`` (m, r) are local indices with
    ``n`` points per axis. Returns (m, r) canonical indices.
    """
    m, r = idx.shape
    if r == 0:
        return idx
    origin = np.argmin(gids, axis=1)
    bits = (origin[:, None] >> np.arange(r - 1, -1, -1)[None, :]) & 1
    out = np.where(bits == 1, n - 1 - idx, idx)
    if r == 1:
        return out
    # corner adjacent to the origin along each axis
    adj = origin[:, None] ^ (1 << np.arange(r - 1, -1, -1))[None, :]
    adj_ids = np.take_along_axis(gids, adj, axis=1)
    order = np.argsort(adj_ids, axis=1, kind="stable")
    return np.take_along_axis(out, order, axis=1)


def _facet_local_index(basis: NodalBasis):
    """For each local facet: its DOFs and their indices along the free axes."""
    d = basis.d
    out = []
    for f in range(2 * d):
        a = f // 2
        dofs = np.flatnonzero(basis.is_facet_dof(f))
        free = [b for b in range(d) if b != a]
        out.append((dofs, basis.dof_index[dofs][:, free]))
    return out


def build_dof_map(mesh: Mesh, basis: NodalBasis, check=True, tol=1e-10) -> DofMap:
    d, k = basis.d, basis.k
    if mesh.dim != d:
        raise ValueError("mesh and basis dimensions differ")
    nc = mesh.ncells
    nloc = basis.ndofs
    top = mesh.facets
    fc = facet_corners(d)
    nf = len(top)

    facet_slots = 0
    key = np.empty((nc, nloc), dtype=np.int64)
    sign = np.ones((nc, nloc), dtype=np.int64)
    facet_of = -np.ones((nc, nloc), dtype=np.int64)
    is_facet = np.zeros(nloc, dtype=bool)
    for f, (dofs, idx) in enumerate(_facet_local_index(basis)):
        is_facet[dofs] = True
        a = f // 2
        n = len(basis.axis_rules[a][(a + 1) % d])
        facet_slots = n ** (d - 1)
        gids = mesh.cells[:, fc[f]]  # (nc, 2^(d-1))
        fid = top.cell_facet[:, f]
        canon = _canonical(
            np.repeat(gids, len(dofs), axis=0), np.tile(idx, (nc, 1)), n
        ).reshape(nc, len(dofs), d - 1)
        flat = np.zeros((nc, len(dofs)), dtype=np.int64)
        for m in range(d - 1):
            flat = flat * n + canon[:, :, m]
        key[:, dofs] = fid[:, None] * facet_slots + flat
        facet_of[:, dofs] = fid[:, None]
        # sign: +1 for the owner, -(s_owner)(s_self) for the neighbour
        owner = top.cells[fid, 0] == np.arange(nc)
        s_self = 2 * (f % 2) - 1
        s_owner = 2 * (top.local[fid, 0] % 2) - 1
        sign[:, dofs] = np.where(owner, 1, -s_owner * s_self)[:, None]

    base = nf * facet_slots
    interior = np.flatnonzero(~is_facet)
    key[:, interior] = base + np.arange(nc)[:, None] * nloc + interior[None, :]

    # Neumann facets drop their normal DOFs
    constrained = np.zeros((nc, nloc), dtype=bool)
    if mesh.neumann:
        tags = np.array([t == "N" for t in mesh.boundary_tags()], dtype=bool)
        constrained = (facet_of >= 0) & tags[np.maximum(facet_of, 0)]

    flat_key = key.ravel()
    live = ~constrained.ravel()
    uniq, first, inv = np.unique(flat_key[live], return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    cell_dofs = -np.ones(nc * nloc, dtype=np.int64)
    cell_dofs[live] = rank[inv.ravel()]
    cell_dofs = cell_dofs.reshape(nc, nloc)
    sign[constrained] = 1
    ndofs = len(uniq)

    # classification
    dof_facet = -np.ones(ndofs, dtype=np.int64)
    m = cell_dofs >= 0
    dof_facet[cell_dofs[m]] = facet_of[m]
    dof_class = np.full(ndofs, INTERIOR, dtype=np.int64)
    on_bnd = np.zeros(nloc, dtype=bool)
    for a in range(d):
        idx = basis.dof_index[:, a]
        last = np.array([len(basis.axis_rules[j][a]) - 1 for j in basis.dof_dir])
        lob = np.array([basis.axis_rules[j][a].kind == "lobatto" for j in basis.dof_dir])
        on_bnd |= lob & ((idx == 0) | (idx == last))
    tang = on_bnd & ~is_facet
    dof_class[cell_dofs[m & tang[None, :]]] = TANGENTIAL
    fdofs = dof_facet >= 0
    dof_class[fdofs] = np.where(top.boundary[dof_facet[fdofs]], BOUNDARY, SHARED)

    npl = len(build_pressure_basis(k, d))
    dm = DofMap(
        k=k,
        d=d,
        kind=basis.kind,
        cell_dofs=cell_dofs,
        cell_signs=sign,
        ndofs=ndofs,
        cell_pressure=np.arange(nc * npl, dtype=np.int64).reshape(nc, npl),
        npressure=nc * npl,
        dof_class=dof_class,
        dof_facet=dof_facet,
        n_constrained=int(constrained.sum()),
    )
    if check:
        check_facet_points(mesh, basis, dm, tol)
    return dm


def check_facet_points(mesh: Mesh, basis: NodalBasis, dm: DofMap, tol=1e-10):
    """Shared DOFs must sit at the same physical point on both sides."""
    x, _, _ = cell_geometry(mesh, basis.dof_points, check=False)
    m = dm.cell_dofs >= 0
    g = dm.cell_dofs[m]
    pts = x[m]
    ref = np.empty((dm.ndofs, mesh.dim))
    ref[g[::-1]] = pts[::-1]  # first appearance wins
    err = np.abs(pts - ref[g]).max(axis=1)
    bad = err > tol * max(mesh.h, 1e-300)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise TopologyError(
            f"facet node mismatch for velocity DOF {int(g[i])}: {err[i]:.3e} apart"
        )


@dataclass
class NodeBlocks:
    """Velocity DOFs grouped by global Gauss-Lobatto node.

    Block ``b`` owns ``dofs[ptr[b]:ptr[b+1]]``; ``entity_dim[b]`` is the
    dimension of the smallest mesh entity containing its node (0 vertex,
    d interior).
    """

    ptr: np.ndarray
    dofs: np.ndarray
    entity_dim: np.ndarray
    block_of: np.ndarray
    pos: np.ndarray

    def __len__(self):
        return len(self.ptr) - 1

    @property
    def sizes(self):
        return np.diff(self.ptr)

    def members(self, b):
        return self.dofs[self.ptr[b] : self.ptr[b + 1]]


def node_entity_keys(mesh: Mesh, basis: NodalBasis):
    """Key of every (cell, node): sorted entity vertices + canonical index.

    Returns keys (nc, nn, 2^d + d) and the entity dimension per local node.
    """
    d, k = basis.d, basis.k
    n = k + 1
    nc = mesh.ncells
    idx = basis.node_index  # (nn, d)
    pattern = np.where(idx == 0, 0, np.where(idx == k, 2, 1))
    nn = len(idx)
    keys = -np.ones((nc, nn, 2**d + d), dtype=np.int64)
    edim = (pattern == 1).sum(axis=1)
    for t in {tuple(p) for p in pattern.tolist()}:
        t = np.array(t)
        nodes = np.flatnonzero(np.all(pattern == t, axis=1))
        free = np.flatnonzero(t == 1)
        fixed = t != 1
        corners = []
        for fb in itertools.product((0, 1), repeat=len(free)):
            bits = np.where(fixed, t // 2, 0)
            bits[free] = fb
            corners.append(corner_index(d, bits))
        gids = mesh.cells[:, corners]  # (nc, 2^r)
        ids = np.sort(gids, axis=1)
        keys[:, nodes, : ids.shape[1]] = ids[:, None, :]
        if len(free) == d:
            # interior: the cell's own vertex set is unique; raw indices
            canon = np.tile(idx[nodes][None], (nc, 1, 1))
        else:
            canon = _canonical(
                np.repeat(gids, len(nodes), axis=0),
                np.tile(idx[nodes][:, free], (nc, 1)),
                n,
            ).reshape(nc, len(nodes), len(free))
        keys[:, nodes, 2**d : 2**d + len(free)] = canon
    return keys, edim


def build_node_blocks(dofmap: DofMap, mesh: Mesh, basis: NodalBasis) -> NodeBlocks:
    if basis.kind != "enhanced":
        raise ValueError("node blocks need the Gauss-Lobatto nodal element")
    d = basis.d
    nc = mesh.ncells
    keys, edim = node_entity_keys(mesh, basis)
    nn = keys.shape[1]
    uniq, first, inv = np.unique(keys.reshape(nc * nn, -1), axis=0, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    node_block = rank[inv.ravel()].reshape(nc, nn)

    local_node = np.arange(dofmap.nlocal) // d
    blk = node_block[:, local_node]  # (nc, nloc)
    m = dofmap.cell_dofs >= 0
    block_of = -np.ones(dofmap.ndofs, dtype=np.int64)
    block_of[dofmap.cell_dofs[m]] = blk[m]
    if np.any(block_of < 0):
        raise TopologyError("velocity DOF without a node block")

    nb = len(uniq)
    entity_dim = np.empty(nb, dtype=np.int64)
    entity_dim[node_block.ravel()] = np.tile(edim, nc)
    order = np.argsort(block_of, kind="stable")
    sizes = np.bincount(block_of, minlength=nb)
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    pos = np.empty(dofmap.ndofs, dtype=np.int64)
    pos[order] = np.arange(dofmap.ndofs) - ptr[block_of[order]]
    return NodeBlocks(ptr, order, entity_dim, block_of, pos)
