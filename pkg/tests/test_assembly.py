from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from mfmfe.assembly import (
    AssemblyError,
    BlockDiagonalMatrix,
    CoefficientError,
    assemble_div,
    assemble_mass_blocks,
    assemble_rhs,
    assemble_rt_exact,
    check_spd_blocks,
    eval_dirichlet_projection,
    export_system,
    local_divergence,
    mapped_permeability,
    mapped_tensor,
    project_dirichlet,
    read_triplets,
    write_triplets,
)
from mfmfe.dofmap import BOUNDARY, build_dof_map, build_node_blocks
from mfmfe.mesh import cell_geometry, example2_mesh, structured_mesh
from mfmfe.quadrature import gauss_rule, tensor_rule
from mfmfe.refbasis import build_nodal_basis, build_pressure_basis, build_rt_basis
from mfmfe.verify import example1_case

from conftest import bilinear_mesh, trilinear_mesh


def identity_K(x):
    return np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy()


def full_K(x):
    d = x.shape[-1]
    M = np.eye(d) * 2 + 0.3 * (np.ones((d, d)) - np.eye(d))
    return np.broadcast_to(M, x.shape + (d,)).copy() * (1 + x[..., :1, None] ** 2)


def mfmfe_system(mesh, k, K=full_K):
    basis = build_nodal_basis(k, mesh.dim)
    dm = build_dof_map(mesh, basis)
    blocks = build_node_blocks(dm, mesh, basis)
    return basis, dm, blocks, assemble_mass_blocks(mesh, dm, blocks, basis, K)


def test_mapped_permeability_is_inverse_of_mapped_tensor(rng):
    DF = rng.normal(size=(5, 3, 3)) + 3 * np.eye(3)
    J = np.linalg.det(DF)
    A = rng.normal(size=(5, 3, 3))
    K = A @ A.transpose(0, 2, 1) + np.eye(3)
    assert np.allclose(mapped_permeability(DF, J, K) @ mapped_tensor(DF, J, K), np.eye(3))


def test_non_spd_permeability_rejected():
    with pytest.raises(CoefficientError):
        mapped_permeability(np.eye(2)[None], np.ones(1), -np.eye(2)[None])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_reference_mass_is_weight_diagonal(k):
    # [0,1]^2 with K = I: the mapped inverse tensor is the identity
    mesh = structured_mesh(1, 2)
    basis, dm, blocks, A = mfmfe_system(mesh, k, identity_K)
    M = A.tocsr().toarray()
    w = np.repeat(basis.node_weights, 2)
    assert np.allclose(M, np.diag(w[np.argsort(dm.cell_dofs[0])]))


@pytest.mark.parametrize("mesh,k", [(bilinear_mesh(2), 1), (bilinear_mesh(2), 2), (trilinear_mesh(2), 1)])
def test_mass_matches_dense_quadrature(mesh, k):
    basis, dm, blocks, A = mfmfe_system(mesh, k)
    # brute force: full basis evaluation at the GL nodes, no nodal shortcut
    x, DF, J = cell_geometry(mesh, basis.nodes)
    Kinv = mapped_permeability(DF, J, full_K(x))
    V = basis.eval(basis.nodes)
    dense = np.zeros((dm.ndofs, dm.ndofs))
    for c in range(mesh.ncells):
        loc = np.einsum("q,qab,qla,qmb->lm", basis.node_weights, Kinv[c], V, V)
        loc *= np.outer(dm.cell_signs[c], dm.cell_signs[c])
        g = dm.cell_dofs[c]
        ok = g >= 0
        dense[np.ix_(g[ok], g[ok])] += loc[np.ix_(ok, ok)]
    assert np.allclose(A.tocsr().toarray(), dense, atol=1e-13)
    assert np.allclose(A.matvec(np.ones(dm.ndofs)), dense.sum(1))


def test_mass_blocks_spd_and_grouped():
    mesh = example2_mesh(0)
    _, dm, blocks, A = mfmfe_system(mesh, 1)
    check_spd_blocks(A)
    groups = A.groups()
    assert sum(len(ids) for ids, _, _ in groups.values()) == len(A)
    for s, (ids, dofs, vals) in groups.items():
        assert np.allclose(vals, vals.transpose(0, 2, 1))
        assert np.all(np.linalg.eigvalsh(vals) > 0)
        assert np.array_equal(vals[0], A.block(ids[0]))


def test_check_spd_blocks_names_block():
    A = BlockDiagonalMatrix(np.array([0, 1, 3]), np.arange(3), np.array([1.0, 1, 2, 2, 1]), 3)
    with pytest.raises(AssemblyError, match="block 1"):
        check_spd_blocks(A)


@pytest.mark.parametrize("k,d", [(1, 2), (2, 2), (3, 2), (2, 3)])
def test_local_divergence_exact(k, d):
    basis = build_nodal_basis(k, d)
    pb = build_pressure_basis(k, d)
    rule = tensor_rule(gauss_rule(k + 4), d)
    ref = np.einsum("q,qp,ql->pl", rule.weights, pb.eval(rule.nodes), basis.div(rule.nodes))
    assert np.allclose(local_divergence(basis), ref)


@pytest.mark.parametrize("mesh,k", [(bilinear_mesh(3), 2), (trilinear_mesh(2), 1)])
def test_divergence_of_constant_pressure_is_boundary_flux(mesh, k):
    basis = build_nodal_basis(k, mesh.dim)
    dm = build_dof_map(mesh, basis)
    B = assemble_div(mesh, dm, basis)
    # Lagrange pressure nodes sum to one, so B^T 1 = boundary flux of each basis field
    flux = B.T @ np.ones(dm.npressure)
    assert np.abs(flux[dm.dof_class != BOUNDARY]).max() < 1e-12
    assert np.abs(flux[dm.dof_class == BOUNDARY]).min() > 1e-3


def test_divergence_is_mesh_independent():
    # identical local blocks on every cell, up to orientation signs
    mesh = bilinear_mesh(3)
    basis = build_nodal_basis(2, 2)
    dm = build_dof_map(mesh, basis)
    B = assemble_div(mesh, dm, basis).toarray()
    Bloc = local_divergence(basis)
    for c in range(mesh.ncells):
        sub = B[np.ix_(dm.cell_pressure[c], dm.cell_dofs[c])] * dm.cell_signs[c]
        assert np.allclose(sub, Bloc)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_dirichlet_projection_reproduces_polynomials(k):
    mesh = structured_mesh(2, 2)
    # on an axis-aligned mesh x and y are affine along every facet
    g = lambda x: 1.0 + (x[..., 0] ** (k - 1)) + 0.5 * x[..., 1] ** (k - 1)  # noqa: E731
    cells, lf, coef = project_dirichlet(g, mesh, k)
    pts = np.linspace(-1, 1, 5)[:, None]
    from mfmfe.refbasis import facet_points

    for f in range(4):
        sel = np.flatnonzero(lf == f)
        x, _, _ = cell_geometry(structured_mesh(2, 2), facet_points(2, f, pts))
        assert np.allclose(eval_dirichlet_projection(2, k, coef[sel], pts), g(x[cells[sel]]))


def test_pressure_load_is_cell_volume():
    h = 0.25
    mesh = structured_mesh(4, 2)
    case = SimpleNamespace(f=lambda x: np.ones(x.shape[:-1]), g=lambda x: np.zeros(x.shape[:-1]))
    basis = build_nodal_basis(1, 2)
    dm = build_dof_map(mesh, basis)
    G, F = assemble_rhs(mesh, dm, basis, case)
    assert np.allclose(F, h**2) and np.allclose(G, 0)


def test_rhs_quadrature_refinement():
    mesh = bilinear_mesh(3)
    case = example1_case()
    basis = build_nodal_basis(2, 2)
    dm = build_dof_map(mesh, basis)
    G1, F1 = assemble_rhs(mesh, dm, basis, case)
    G2, F2 = assemble_rhs(mesh, dm, basis, case, quad_order=10)
    assert np.linalg.norm(F1 - F2) < 1e-3 * np.linalg.norm(F2)
    assert np.linalg.norm(G1 - G2) < 1e-3 * np.linalg.norm(G2)


def test_dirichlet_load_of_constant_has_no_net_flux():
    # g = 1 against the reference field (1, 0) in every cell: the fluxes
    # through x = 0 and x = 1 cancel, top and bottom carry none
    mesh = structured_mesh(2, 2)
    case = SimpleNamespace(f=lambda x: np.zeros(x.shape[:-1]), g=lambda x: np.ones(x.shape[:-1]))
    basis = build_nodal_basis(2, 2)
    dm = build_dof_map(mesh, basis)
    G, _ = assemble_rhs(mesh, dm, basis, case)
    U = np.zeros(dm.ndofs)
    U[dm.cell_dofs] = (basis.dof_dir == 0) * dm.cell_signs
    assert abs(G @ U) < 1e-12
    # x = 0 alone: two cells, each -<1, -1> over a reference facet of length 2
    x, _, _ = cell_geometry(mesh, basis.dof_points)
    on_left = np.zeros(dm.ndofs, dtype=bool)
    on_left[dm.cell_dofs[np.isclose(x[..., 0], 0)]] = True
    assert np.isclose(G @ (U * on_left), 4.0)


@pytest.mark.parametrize("order,d", [(0, 2), (1, 2), (1, 3)])
def test_rt_mass_spd(order, d):
    mesh = bilinear_mesh(2) if d == 2 else trilinear_mesh(2)
    basis = build_rt_basis(order, d)
    dm = build_dof_map(mesh, basis)
    A, B = assemble_rt_exact(mesh, dm, basis, full_K)
    M = A.toarray()
    assert np.allclose(M, M.T) and np.linalg.eigvalsh(M).min() > 0
    assert B.shape == (dm.npressure, dm.ndofs)


def test_triplet_roundtrip(tmp_path, rng):
    M = sp.random(7, 5, density=0.4, random_state=1) * np.pi
    write_triplets(tmp_path / "m.txt", M, "test")
    back = read_triplets(tmp_path / "m.txt")
    assert back.shape == (7, 5) and (back != M).nnz == 0
    text = (tmp_path / "m.txt").read_text()
    assert "np.float64" not in text


def test_export_system(tmp_path):
    mesh = structured_mesh(2, 2)
    basis, dm, blocks, A = mfmfe_system(mesh, 1)
    B = assemble_div(mesh, dm, basis)
    G, F = np.zeros(dm.ndofs), np.arange(dm.npressure, dtype=float)
    export_system(str(tmp_path / "s"), A, B, G, F)
    assert np.allclose(read_triplets(tmp_path / "s_A.txt").toarray(), A.tocsr().toarray())
    assert np.allclose(read_triplets(tmp_path / "s_B.txt").toarray(), B.toarray())
    rhs = read_triplets(tmp_path / "s_rhs.txt")
    assert rhs.shape == (dm.ndofs + dm.npressure, 1)
    assert np.allclose(rhs.toarray()[:, 0], np.concatenate([G, F]))


def exact_mass(mesh, dm, basis, K, nq):
    """Globally assembled mass matrix with a high-order Gauss rule."""
    rule = tensor_rule(gauss_rule(nq), mesh.dim)
    x, DF, J = cell_geometry(mesh, rule.nodes)
    Kinv = mapped_permeability(DF, J, K(x))
    V = basis.eval(rule.nodes)
    M = np.zeros((dm.ndofs, dm.ndofs))
    for c in range(mesh.ncells):
        loc = np.einsum("q,qab,qla,qmb->lm", rule.weights, Kinv[c], V, V)
        loc *= np.outer(dm.cell_signs[c], dm.cell_signs[c])
        M[np.ix_(dm.cell_dofs[c], dm.cell_dofs[c])] += loc
    return M


@pytest.mark.parametrize("k", [1, 2])
def test_quadrature_norm_equivalence_stable(k, rng):
    from scipy.linalg import eigh

    bounds = []
    for n in (2, 4, 8):
        mesh = bilinear_mesh(n, amp=0.2)
        basis, dm, _, A = mfmfe_system(mesh, k)
        M = exact_mass(mesh, dm, basis, full_K, k + 3)
        Aq = A.tocsr().toarray()
        lam = eigh(Aq, M, eigvals_only=True)  # sharp constants c0^2, c1^2
        q = rng.normal(size=(100, dm.ndofs))
        r = np.einsum("ni,ij,nj->n", q, Aq, q) / np.einsum("ni,ij,nj->n", q, M, q)
        assert lam[0] - 1e-10 <= r.min() and r.max() <= lam[-1] + 1e-10
        bounds.append((lam[0], lam[-1]))
    lo, hi = np.array(bounds).T
    assert lo.min() > 0.1 and hi.max() < 10
    # the constants do not drift under refinement
    assert lo.max() / lo.min() < 1.5 and hi.max() / hi.min() < 1.5


def test_shared_vertex_block_two_cells():
    from conftest import two_cell_mesh

    mesh = two_cell_mesh()
    basis, dm, blocks, A = mfmfe_system(mesh, 1)
    M = exact_mass(mesh, dm, basis, full_K, 1 + 3)
    lumped = A.tocsr().toarray()
    # bottom vertex (1,0): two boundary normals and the shared interior normal
    x, _, _ = cell_geometry(mesh, basis.dof_points)
    at = np.unique(dm.cell_dofs[np.all(np.isclose(x, [1, 0]), axis=-1)])
    b = blocks.block_of[at[0]]
    assert blocks.sizes[b] == 3 and set(blocks.members(b)) == set(at)
    dense = np.zeros_like(lumped)
    for c in range(2):
        Vn = basis.eval(basis.nodes)
        xx, DF, J = cell_geometry(mesh, basis.nodes)
        Kinv = mapped_permeability(DF, J, full_K(xx))
        loc = np.einsum("q,qab,qla,qmb->lm", basis.node_weights, Kinv[c], Vn, Vn)
        loc *= np.outer(dm.cell_signs[c], dm.cell_signs[c])
        dense[np.ix_(dm.cell_dofs[c], dm.cell_dofs[c])] += loc
    assert np.allclose(lumped[np.ix_(at, at)], dense[np.ix_(at, at)])
    assert np.abs(M[np.ix_(at, at)]).max() > 0


def test_divergence_against_physical_quadrature(rng):
    from mfmfe.solver import DiscreteSolution
    from mfmfe.verify import velocity_at

    mesh = bilinear_mesh(3, amp=0.25)
    k = 2
    basis = build_nodal_basis(k, 2)
    dm = build_dof_map(mesh, basis)
    B = assemble_div(mesh, dm, basis)
    U = rng.normal(size=dm.ndofs)
    W = rng.normal(size=dm.npressure)
    sol = DiscreteSolution(mesh, k, "mfmfe", basis, dm, U, np.zeros(dm.npressure), None)
    rule = tensor_rule(gauss_rule(k + 4), 2)
    _, _, div, J = velocity_at(sol, rule.nodes)  # physical divergence (1/J) div_hat
    w = W[dm.cell_pressure] @ build_pressure_basis(k, 2).eval(rule.nodes).T
    assert np.isclose(W @ (B @ U), np.sum(J * rule.weights * div * w), rtol=1e-12)


def test_projection_of_sine_is_facet_mean():
    mesh = structured_mesh(2, 2)
    g = lambda x: np.sin(3 * x[..., 0] + 2 * x[..., 1])  # noqa: E731
    cells, lf, coef = project_dirichlet(g, mesh, 1, nq=12)
    assert coef.shape == (8, 1)
    # bottom facets (y = 0, x in [0, 1/2] and [1/2, 1]): mean of sin(3x)
    means = sorted(coef[lf == 2, 0])
    ref = sorted([(np.cos(0) - np.cos(1.5)) / 1.5, (np.cos(1.5) - np.cos(3)) / 1.5])
    assert np.allclose(means, ref, rtol=1e-12)


def test_projection_of_constant():
    cells, lf, coef = project_dirichlet(lambda x: 2.5 + 0 * x[..., 0], trilinear_mesh(2), 3)
    assert np.allclose(coef[:, 0], 2.5) and np.allclose(coef[:, 1:], 0)


def test_rt0_unit_square_diagonal():
    # nodal RT0 on one unit cell, K = I: each basis field is ((1 +- x)/2, 0) on
    # [-1,1]^2 and the mapped inverse tensor is I, so diag = 2 * 8/3 / 4 = 4/3
    mesh = structured_mesh(1, 2)
    basis = build_rt_basis(0, 2)
    dm = build_dof_map(mesh, basis)
    A, _ = assemble_rt_exact(mesh, dm, basis, identity_K)
    M = A.toarray()
    assert np.allclose(np.diag(M), 4 / 3)
    assert np.abs(M - M.T).max() < 1e-14
    np.linalg.cholesky(M)


def test_f_load_quadrature_refinement_example1():
    from mfmfe.mesh import example1_mesh

    mesh = example1_mesh(0)
    case = example1_case()
    basis = build_nodal_basis(2, 2)
    dm = build_dof_map(mesh, basis)
    _, F = assemble_rhs(mesh, dm, basis, case)
    _, F6 = assemble_rhs(mesh, dm, basis, case, quad_order=2 + 6)
    assert abs(np.linalg.norm(F) - np.linalg.norm(F6)) < 1e-8 * np.linalg.norm(F6)
