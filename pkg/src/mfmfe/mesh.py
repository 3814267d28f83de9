"""Quadrilateral and hexahedral meshes with multilinear cell maps.

Cells list their vertices in the corner order r1..r4 (2d) / r1..r8 (3d):
counter-clockwise on the bottom face, then the top face. Cell maps are
written on the unit cell [0,1]^d; the ``*_ref`` helpers take points of
[-1,1]^d, which is where quadrature rules and reference bases live.

Local facet ``f = 2*a + s`` is the facet where reference coordinate ``a``
equals its lower (s=0) or upper (s=1) bound.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

DIRICHLET = "D"
NEUMANN = "N"

CORNERS = {
    2: np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.int64),
    3: np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=np.int64,
    ),
}


class GeometryError(ValueError):
    """Raised for degenerate or inverted cells."""


class TopologyError(ValueError):
    """Raised when the cell-facet structure is inconsistent."""


def corner_index(d, bits):
    """Position in the corner order of the unit-cell corner ``bits``."""
    bits = tuple(int(b) for b in bits)
    for i, c in enumerate(CORNERS[d]):
        if tuple(c) == bits:
            return i
    raise KeyError(bits)


def facet_corners(d):
    """Corner indices of each local facet, in tensor order of the free axes."""
    out = []
    for a in range(d):
        free = [b for b in range(d) if b != a]
        for s in (0, 1):
            rows = []
            for fb in itertools.product((0, 1), repeat=d - 1):
                bits = [0] * d
                bits[a] = s
                for ax, v in zip(free, fb):
                    bits[ax] = v
                rows.append(corner_index(d, bits))
            out.append(rows)
    return np.array(out, dtype=np.int64)


def shape_functions(d, xhat):
    """Multilinear shape functions and their gradients at unit-cell points.

    Returns N of shape (npts, 2^d) and dN of shape (npts, 2^d, d).
    """
    xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
    c = CORNERS[d]
    f = np.where(c[None, :, :] == 1, xhat[:, None, :], 1.0 - xhat[:, None, :])
    df = np.where(c == 1, 1.0, -1.0)
    N = np.prod(f, axis=2)
    dN = np.empty(f.shape)
    for a in range(d):
        others = np.prod(np.delete(f, a, axis=2), axis=2)
        dN[:, :, a] = df[None, :, a] * others
    return N, dN


@dataclass
class FacetTopology:
    vertices: np.ndarray  # (nf, 2^(d-1)) sorted global vertex ids
    cell_facet: np.ndarray  # (nc, 2d) facet id of each local facet
    cells: np.ndarray  # (nf, 2) owner, neighbour (-1 on the boundary)
    local: np.ndarray  # (nf, 2) local facet ids

    @property
    def boundary(self):
        return self.cells[:, 1] < 0

    def __len__(self):
        return len(self.vertices)


@dataclass
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    neumann: frozenset = field(default_factory=frozenset)
    nominal_h: float | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.neumann = frozenset(tuple(sorted(int(v) for v in f)) for f in self.neumann)
        d = self.vertices.shape[1]
        if d not in (2, 3) or self.cells.shape[1] != 2**d:
            raise ValueError("cells must list 2^d vertices of a 2d or 3d mesh")

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def ncells(self):
        return len(self.cells)

    @property
    def nverts(self):
        return len(self.vertices)

    @cached_property
    def h(self):
        """Largest cell diameter (over vertex pairs)."""
        pts = self.vertices[self.cells]
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    @cached_property
    def facets(self) -> FacetTopology:
        d = self.dim
        fc = facet_corners(d)
        nc = self.ncells
        verts = np.sort(self.cells[:, fc], axis=2).reshape(nc * 2 * d, -1)
        uniq, inv, counts = np.unique(verts, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if np.any(counts > 2):
            raise TopologyError("a facet is shared by more than two cells")
        order = np.argsort(inv, kind="stable")
        first = np.searchsorted(inv[order], np.arange(len(uniq)))
        cells = -np.ones((len(uniq), 2), dtype=np.int64)
        local = -np.ones((len(uniq), 2), dtype=np.int64)
        cells[:, 0] = order[first] // (2 * d)
        local[:, 0] = order[first] % (2 * d)
        two = counts == 2
        second = order[first[two] + 1]
        cells[two, 1] = second // (2 * d)
        local[two, 1] = second % (2 * d)
        return FacetTopology(uniq, inv.reshape(nc, 2 * d), cells, local)

    def facet_tag(self, key):
        return NEUMANN if tuple(sorted(key)) in self.neumann else DIRICHLET

    def boundary_tags(self):
        """Tag (D or N) of every facet; interior facets get None."""
        top = self.facets
        return [
            (NEUMANN if tuple(v) in self.neumann else DIRICHLET) if b else None
            for v, b in zip(top.vertices.tolist(), top.boundary)
        ]

    def geometry(self, cell):
        return CellGeometry(cell, self.vertices[self.cells[cell]])


@dataclass
class CellGeometry:
    cell: int
    vertices: np.ndarray

    def map_point(self, xhat):
        return map_point(self, xhat)


def map_point(geom: CellGeometry, xhat):
    """Image, Jacobian matrix and determinant at a point of [0,1]^d."""
    d = geom.vertices.shape[1]
    N, dN = shape_functions(d, np.asarray(xhat, dtype=float)[None, :])
    x = N[0] @ geom.vertices
    DF = geom.vertices.T @ dN[0]
    J = float(np.linalg.det(DF))
    if J <= 0:
        raise GeometryError(f"cell {geom.cell}: nonpositive Jacobian {J:.3e} at {xhat}")
    return x, DF, J


def cell_geometry(mesh: Mesh, xi, check=True):
    """Maps of every cell at reference points ``xi`` in [-1,1]^d.

    Returns x (nc, nq, d), DF (nc, nq, d, d) and J (nc, nq), all with
    respect to the [-1,1] coordinates.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    N, dN = shape_functions(mesh.dim, 0.5 * (xi + 1.0))
    V = mesh.vertices[mesh.cells]
    x = np.einsum("qc,ecd->eqd", N, V)
    DF = 0.5 * np.einsum("qca,ecd->eqda", dN, V)
    J = np.linalg.det(DF)
    if check and np.any(J <= 0):
        bad = int(np.argwhere(J <= 0)[0, 0])
        raise GeometryError(f"cell {bad}: nonpositive Jacobian {J[bad].min():.3e}")
    return x, DF, J


def facet_scale(DF, J, normal):
    """J_e = |J DF^{-T} n| for reference normal ``normal``."""
    Finv = np.linalg.inv(DF)
    v = J[..., None] * np.einsum("...ba,b->...a", Finv, np.asarray(normal, dtype=float))
    return np.linalg.norm(v, axis=-1)


def structured_mesh(n, d, lower=0.0, upper=1.0):
    """n^d box mesh of [lower, upper]^d."""
    ticks = np.linspace(lower, upper, n + 1)
    grid = np.array(list(itertools.product(range(n + 1), repeat=d)), dtype=np.int64)
    vertices = ticks[grid]
    strides = (n + 1) ** np.arange(d - 1, -1, -1)
    cells = []
    for c in itertools.product(range(n), repeat=d):
        cells.append([int(np.dot(np.add(c, p), strides)) for p in CORNERS[d]])
    mesh = Mesh(vertices, np.array(cells))
    mesh.nominal_h = (upper - lower) / n
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split each cell into 2^d children through mapped midpoints."""
    d = mesh.dim
    nc = mesh.ncells
    nv = mesh.nverts
    V = mesh.vertices[mesh.cells]
    patterns = list(itertools.product(range(3), repeat=d))
    keys = -np.ones((nc, len(patterns), 2**d), dtype=np.int64)
    points = np.empty((nc, len(patterns), d))
    for p, t in enumerate(patterns):
        t = np.array(t)
        N, _ = shape_functions(d, (t / 2.0)[None, :])
        points[:, p] = N[0] @ V
        fixed = t != 1
        bits = [c for c in CORNERS[d] if np.all(c[fixed] == t[fixed] // 2)]
        ids = np.sort(mesh.cells[:, [corner_index(d, b) for b in bits]], axis=1)
        keys[:, p, : ids.shape[1]] = ids
    flat = keys.reshape(-1, 2**d)
    is_old = flat[:, 1] < 0
    new_ids = np.empty(len(flat), dtype=np.int64)
    new_ids[is_old] = flat[is_old, 0]
    uniq, first, inv = np.unique(flat[~is_old], axis=0, return_index=True, return_inverse=True)
    # number new vertices in order of first appearance
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(uniq))
    new_ids[~is_old] = nv + rank[inv.ravel()]
    vertices = np.empty((nv + len(uniq), d))
    vertices[:nv] = mesh.vertices
    vertices[new_ids] = points.reshape(-1, d)
    new_ids = new_ids.reshape(nc, len(patterns))
    pindex = {t: i for i, t in enumerate(patterns)}
    children = []
    for child in CORNERS[d]:
        cols = [pindex[tuple(child + c)] for c in CORNERS[d]]
        children.append(new_ids[:, cols])
    # child-major within parent so siblings stay adjacent
    cells = np.stack(children, axis=1).reshape(nc * 2**d, 2**d)
    neumann = set()
    if mesh.neumann:
        fc = facet_corners(d)
        for e in range(nc):
            for f in range(2 * d):
                if tuple(np.sort(mesh.cells[e, fc[f]])) not in mesh.neumann:
                    continue
                a, s = divmod(f, 2)
                for ci, child in enumerate(CORNERS[d]):
                    if child[a] == s:
                        cell = cells[e * 2**d + ci]
                        neumann.add(tuple(sorted(cell[fc[f]].tolist())))
    out = Mesh(vertices, cells, frozenset(neumann))
    if mesh.nominal_h is not None:
        out.nominal_h = mesh.nominal_h / 2
    return out


def refine(mesh: Mesh, levels: int) -> Mesh:
    for _ in range(levels):
        mesh = refine_uniform(mesh)
    return mesh


def _distortion_2d(x, y):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def example1_coarse_mesh() -> Mesh:
    """3x3 unit-square grid with interior vertices displaced smoothly."""
    mesh = structured_mesh(3, 2)
    x, y = mesh.vertices.T
    s = _distortion_2d(x, y)
    mesh.vertices[:, 0] = x + 0.08 * s
    mesh.vertices[:, 1] = y - 0.06 * s
    return mesh


def example1_mesh(level: int) -> Mesh:
    if level < 0:
        raise ValueError("level must be >= 0")
    return refine(example1_coarse_mesh(), level)


def example2_coarse_mesh() -> Mesh:
    mesh = structured_mesh(4, 3)
    x, y, z = mesh.vertices.T.copy()
    c = np.cos(3 * np.pi * x) * np.cos(3 * np.pi * y) * np.cos(3 * np.pi * z)
    mesh.vertices[:, 0] = x + 0.03 * c
    mesh.vertices[:, 1] = y - 0.04 * c
    mesh.vertices[:, 2] = z + 0.05 * c
    return mesh


def example2_mesh(level: int) -> Mesh:
    if level < 0:
        raise ValueError("level must be >= 0")
    return refine(example2_coarse_mesh(), level)


# quadrilateral faces of a hexahedron, vertices in cyclic order
HEX_FACES = np.array(
    [[0, 1, 2, 3], [4, 5, 6, 7], [0, 1, 5, 4], [3, 2, 6, 7], [0, 3, 7, 4], [1, 2, 6, 5]]
)


@dataclass
class GeometryReport:
    h: float
    face_deviation: np.ndarray  # max over faces of |r34 - r21| per cell
    regularity_deviation: np.ndarray  # |(r21 - r34) - (r65 - r78)| per cell (3d)

    @property
    def h2_constant(self):
        return float(self.face_deviation.max() / self.h**2)

    @property
    def regular_constant(self):
        return float(self.regularity_deviation.max() / self.h**3)

    def is_h2_parallelogram(self, C):
        return bool(np.all(self.face_deviation <= C * self.h**2))

    def is_regular_h2_parallelepiped(self, C):
        return self.is_h2_parallelogram(C) and bool(
            np.all(self.regularity_deviation <= C * self.h**3)
        )


def _quad_deviation(r):
    # |r34 - r21| for cyclic vertices r1..r4
    return np.linalg.norm((r[..., 2, :] - r[..., 3, :]) - (r[..., 1, :] - r[..., 0, :]), axis=-1)


def geometry_report(mesh: Mesh) -> GeometryReport:
    V = mesh.vertices[mesh.cells]
    if mesh.dim == 2:
        face = _quad_deviation(V)
        reg = np.zeros(mesh.ncells)
    else:
        face = _quad_deviation(V[:, HEX_FACES]).max(axis=1)
        r = lambda i: V[:, i - 1]  # noqa: E731
        reg = np.linalg.norm((r(2) - r(1) - r(3) + r(4)) - (r(6) - r(5) - r(7) + r(8)), axis=1)
    return GeometryReport(mesh.h, face, reg)


def write_mesh(mesh: Mesh, path):
    """Plain-text mesh: header, vertices, cells, boundary facet tags."""
    top = mesh.facets
    bnd = np.flatnonzero(top.boundary)
    with open(path, "w") as fh:
        fh.write(f"{mesh.dim} {mesh.ncells} {mesh.nverts} {len(bnd)}\n")
        for v in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in v) + "\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")
        for f in bnd:
            key = tuple(int(i) for i in top.vertices[f])
            fh.write(mesh.facet_tag(key) + " " + " ".join(map(str, key)) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
    header = [int(t) for t in lines[0]]
    d, nc, nv = header[:3]
    nb = header[3] if len(header) > 3 else 0
    vertices = np.array(lines[1 : 1 + nv], dtype=float)
    cells = np.array(lines[1 + nv : 1 + nv + nc], dtype=np.int64)
    neumann = set()
    for tok in lines[1 + nv + nc : 1 + nv + nc + nb]:
        if tok[0] not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary tag {tok[0]!r}")
        if tok[0] == NEUMANN:
            neumann.add(tuple(sorted(int(t) for t in tok[1:])))
    if vertices.shape != (nv, d) or cells.shape != (nc, 2**d):
        raise ValueError("mesh file does not match its header")
    return Mesh(vertices, cells, frozenset(neumann))
