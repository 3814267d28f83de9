import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import legendre as npleg

from mfmfe.quadrature import gauss_lobatto_rule, gauss_rule, tensor_rule
from mfmfe.refbasis import (
    build_bubble_span,
    build_nodal_basis,
    build_pressure_basis,
    build_rt_basis,
    build_rt_span,
    direct_sum_rank,
    element_report,
    enhanced_span,
    facet_points,
    lagrange_1d,
    legendre_values,
)

ORDERS = [(k, d) for d in (2, 3) for k in (1, 2, 3, 4)]


def rt_dim(order, d):
    # component j: (order+2) along axis j times (order+1) along the others
    return d * (order + 2) * (order + 1) ** (d - 1)


def bubble_dim(k, d):
    return 2 * (k + 1) if d == 2 else 3 * (k + 1) * (2 * k + 1)


@pytest.mark.parametrize("k,d", ORDERS)
def test_dimensions(k, d):
    assert len(build_rt_span(k - 1, d)) == rt_dim(k - 1, d)
    assert len(build_bubble_span(k, d)) == bubble_dim(k, d)
    assert len(enhanced_span(k, d)) == d * (k + 1) ** d
    rank, nrt, nb = direct_sum_rank(k, d)
    assert rank == nrt + nb == d * (k + 1) ** d


def test_small_dimensions():
    assert len(build_rt_span(0, 2)) == 4 and len(build_rt_span(0, 3)) == 6
    assert len(build_rt_span(1, 3)) == 36
    assert len(enhanced_span(1, 2)) == 8 and len(enhanced_span(1, 3)) == 24
    assert len(enhanced_span(2, 3)) == 81


@pytest.mark.parametrize("k,d", ORDERS)
def test_bubbles_are_divergence_free(k, d):
    span = build_bubble_span(k, d)
    x = np.random.default_rng(0).uniform(-1, 1, (30, d))
    assert np.abs(span.divergence(x)).max() < 1e-12
    # and each has a variable of degree k+1, so none lies in Q^k in every component
    assert np.all(span.exponents.max(0) == k + 1)


@pytest.mark.parametrize("k,d", ORDERS)
def test_nodal_duality(k, d):
    b = build_nodal_basis(k, d)
    vals = b.eval(b.dof_points)  # (ndofs, ndofs, d)
    phi = vals[np.arange(b.ndofs), :, b.dof_dir]
    assert np.allclose(phi, np.eye(b.ndofs), atol=1e-9)
    gl = gauss_lobatto_rule(k + 1).points
    assert np.allclose(b.nodes, np.array(list(itertools.product(gl, repeat=d))))
    assert np.array_equal(b.dof_dir, np.tile(np.arange(d), len(b.nodes)))


@pytest.mark.parametrize("order,d", [(0, 2), (1, 2), (2, 2), (0, 3), (1, 3)])
def test_rt_nodal_duality(order, d):
    b = build_rt_basis(order, d)
    assert b.ndofs == rt_dim(order, d)
    vals = b.eval(b.dof_points)
    assert np.allclose(vals[np.arange(b.ndofs), :, b.dof_dir], np.eye(b.ndofs), atol=1e-9)


@pytest.mark.parametrize("k,d", [(1, 2), (2, 2), (3, 2), (1, 3), (2, 3)])
def test_divergence_against_finite_differences(k, d):
    b = build_nodal_basis(k, d)
    x = np.random.default_rng(1).uniform(-0.9, 0.9, (5, d))
    eps = 1e-6
    fd = sum(
        (b.eval(x + eps * e)[:, :, a] - b.eval(x - eps * e)[:, :, a]) / (2 * eps)
        for a, e in enumerate(np.eye(d))
    )
    assert np.allclose(b.div(x), fd, atol=1e-6)


@pytest.mark.parametrize("k,d", ORDERS)
def test_divergence_theorem(k, d):
    b = build_nodal_basis(k, d)
    rule = tensor_rule(gauss_rule(k + 2), d)
    volume = rule.weights @ b.div(rule.nodes)
    frule = tensor_rule(gauss_rule(k + 2), d - 1)
    flux = 0.0
    for f in range(2 * d):
        a, s = divmod(f, 2)
        vals = b.eval(facet_points(d, f, frule.nodes))[:, :, a]
        flux = flux + (2 * s - 1) * frule.weights @ vals
    assert np.allclose(volume, flux, atol=1e-10)


@pytest.mark.parametrize("k,d", ORDERS)
def test_facet_dof_partition(k, d):
    b = build_nodal_basis(k, d)
    for f in range(2 * d):
        a, s = divmod(f, 2)
        dofs = b.facet_dofs[f]
        assert len(dofs) == (k + 1) ** (d - 1)
        assert np.allclose(b.dof_points[dofs, a], 2 * s - 1)
        # other DOFs have vanishing normal trace on facet f
        pts = facet_points(d, f, np.random.default_rng(3).uniform(-1, 1, (7, d - 1)))
        rest = np.setdiff1d(np.arange(b.ndofs), dofs)
        assert np.abs(b.eval(pts)[:, rest, a]).max() < 1e-10


@pytest.mark.parametrize("k,d", ORDERS)
def test_element_report_passes(k, d):
    rep = element_report(k, d)
    assert rep.ok, rep.checks
    assert rep.dim == d * (k + 1) ** d


def test_legendre_against_numpy():
    x = np.linspace(-1, 1, 11)
    for n in range(6):
        ref = npleg.legvander(x, n)
        assert np.allclose(legendre_values(n, x), ref)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.floats(-1, 1))
def test_lagrange_partition_of_unity(n, x):
    nodes = gauss_rule(n).points
    L, dL = lagrange_1d(nodes, np.array([x]))
    assert np.isclose(L.sum(), 1.0) and abs(dL.sum()) < 1e-9


@pytest.mark.parametrize("k,d", [(1, 2), (2, 2), (3, 3)])
def test_pressure_basis_interpolates_polynomials(k, d, rng):
    pb = build_pressure_basis(k, d)
    assert len(pb) == k**d
    c = rng.normal(size=(k,) * d)

    def poly(x):
        v = np.zeros(len(x))
        for e in itertools.product(range(k), repeat=d):
            v += c[e] * np.prod(x ** np.array(e), axis=1)
        return v

    x = rng.uniform(-1, 1, (8, d))
    assert np.allclose(pb.eval(x) @ poly(pb.nodes), poly(x))
    eps = 1e-6
    g = pb.grad(x).transpose(0, 2, 1) @ poly(pb.nodes)
    fd = np.stack([(poly(x + eps * e) - poly(x - eps * e)) / (2 * eps) for e in np.eye(d)], 1)
    assert np.allclose(g, fd, atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.sampled_from([2, 3]), st.integers(0, 2**31 - 1))
def test_nodal_basis_reproduces_span(k, d, seed):
    # interpolating any member of the span at the nodes returns it exactly
    rng = np.random.default_rng(seed)
    b = build_nodal_basis(k, d)
    c = rng.normal(size=len(b.span))

    def v(x):
        return np.einsum("ptc,t->pc", b.span.evaluate(x), c)

    dof = v(b.dof_points)[np.arange(b.ndofs), b.dof_dir]
    x = rng.uniform(-1, 1, (5, d))
    assert np.allclose(np.einsum("pnc,n->pc", b.eval(x), dof), v(x), atol=1e-9)
