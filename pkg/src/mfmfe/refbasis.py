"""Reference elements on [-1,1]^d.

The velocity element of order k is RT_{k-1} enriched with the curl bubbles
of order k, so that every component has dimension Q^k and the degrees of
freedom are the d Cartesian components at the (k+1)^d tensor Gauss-Lobatto
points. Node ``i`` and direction ``j`` give local DOF ``i*d + j``.

The same machinery builds a nodal RT_{k-1} element (component j sampled
at Gauss-Lobatto points along axis j and Gauss points along the other
axes) for the comparison method.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .quadrature import Rule1D, gauss_lobatto_rule, gauss_rule, tensor_rule

VANDERMONDE_COND_MAX = 1e12


class ElementError(RuntimeError):
    """Raised when a reference element cannot be constructed."""


@dataclass
class PolySpan:
    """Span of vector polynomials; term t is a list of (component, coeff, exponents)."""

    d: int
    terms: list

    def __post_init__(self):
        monos = sorted({e for t in self.terms for _, _, e in t})
        self.exponents = np.array(monos, dtype=np.int64).reshape(-1, self.d)
        pos = {e: i for i, e in enumerate(monos)}
        self.coeffs = np.zeros((len(self.terms), self.d, len(monos)))
        for n, t in enumerate(self.terms):
            for c, a, e in t:
                self.coeffs[n, c, pos[e]] += a

    def __len__(self):
        return len(self.terms)

    def __add__(self, other):
        return PolySpan(self.d, self.terms + other.terms)

    def _monomials(self, x, deriv=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        e = self.exponents
        if deriv is None:
            return np.prod(x[:, None, :] ** e[None], axis=2)
        e2 = e.copy()
        e2[:, deriv] = np.maximum(e[:, deriv] - 1, 0)
        return e[None, :, deriv] * np.prod(x[:, None, :] ** e2[None], axis=2)

    def evaluate(self, x):
        """Values of every term, shape (npts, nterms, d)."""
        return np.einsum("pm,tcm->ptc", self._monomials(x), self.coeffs)

    def divergence(self, x):
        return sum(
            np.einsum("pm,tm->pt", self._monomials(x, c), self.coeffs[:, c]) for c in range(self.d)
        )


def _rt_terms(k, d):
    terms = []
    for j in range(d):
        ranges = [range(k + 2) if a == j else range(k + 1) for a in range(d)]
        for e in itertools.product(*ranges):
            terms.append([(j, 1.0, e)])
    return terms


def build_rt_span(k: int, d: int) -> PolySpan:
    """RT_k: component j in Q^k + x_j Q^k."""
    if k < 0:
        raise ValueError("RT order must be >= 0")
    return PolySpan(d, _rt_terms(k, d))


def build_bubble_span(k: int, d: int) -> PolySpan:
    """Curl bubbles of order k.

    For component family i and exponents a (0 <= a_m <= k, some a_m = k
    with m != i) the term is x_i^{a_i - 1} prod_{m != i} x_m^{a_m} times the
    vector with entry (sum_{m != i} a_m + d - 1) x_i at i and -a_i x_m at
    each m != i. Entries whose factor x_i^{-1} is not cancelled vanish.
    """
    if k < 1:
        raise ValueError("bubble order must be >= 1")
    terms = []
    for i in range(d):
        for a in itertools.product(range(k + 1), repeat=d):
            others = [a[m] for m in range(d) if m != i]
            if k not in others:
                continue
            term = [(i, float(sum(others) + d - 1), tuple(a))]
            if a[i] > 0:
                for m in range(d):
                    if m != i:
                        e = list(a)
                        e[i] -= 1
                        e[m] += 1
                        term.append((m, -float(a[i]), tuple(e)))
            terms.append(term)
    return PolySpan(d, terms)


def enhanced_span(k: int, d: int) -> PolySpan:
    return build_rt_span(k - 1, d) + build_bubble_span(k, d)


@dataclass
class NodalBasis:
    """Point-value nodal basis of a vector element.

    ``dof_index[n, a]`` indexes ``axis_rules[dof_dir[n]][a].points``.
    """

    k: int
    d: int
    kind: str
    span: PolySpan
    dof_dir: np.ndarray
    dof_index: np.ndarray
    axis_rules: list
    coeffs: np.ndarray = field(repr=False)
    vandermonde_cond: float = 0.0

    @property
    def ndofs(self):
        return len(self.dof_dir)

    @property
    def dof_points(self):
        return np.array(
            [
                [self.axis_rules[j][a].points[i] for a, i in enumerate(idx)]
                for j, idx in zip(self.dof_dir, self.dof_index)
            ]
        )

    def eval(self, x):
        """Basis values at points, shape (npts, ndofs, d)."""
        return np.einsum("ptc,tn->pnc", self.span.evaluate(x), self.coeffs)

    def div(self, x):
        return self.span.divergence(x) @ self.coeffs

    def is_facet_dof(self, f):
        """Mask of DOFs that carry the normal trace on local facet f."""
        a, s = divmod(f, 2)
        last = np.array([len(self.axis_rules[j][a]) - 1 for j in self.dof_dir])
        lobatto = np.array([self.axis_rules[j][a].kind == "lobatto" for j in self.dof_dir])
        return (self.dof_dir == a) & lobatto & (self.dof_index[:, a] == s * last)

    @property
    def facet_dofs(self):
        return [np.flatnonzero(self.is_facet_dof(f)) for f in range(2 * self.d)]


@dataclass
class EnhancedBasis(NodalBasis):
    nodes: np.ndarray = None
    node_weights: np.ndarray = None
    node_index: np.ndarray = None

    @property
    def nnodes(self):
        return len(self.nodes)


def _solve_nodal(span, points, dirs):
    V = span.evaluate(points)[np.arange(len(points)), :, dirs]  # (nfunc, nterms)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > VANDERMONDE_COND_MAX:
        raise ElementError(f"singular generalized Vandermonde matrix (cond={cond:.3e})")
    return np.linalg.inv(V), cond


@lru_cache(maxsize=None)
def build_nodal_basis(k: int, d: int) -> EnhancedBasis:
    """Enhanced velocity element with Gauss-Lobatto point-value DOFs."""
    if k < 1:
        raise ValueError("velocity order k must be >= 1")
    span = enhanced_span(k, d)
    gl = gauss_lobatto_rule(k + 1)
    rule = tensor_rule(gl, d)
    nn = len(rule)
    dirs = np.tile(np.arange(d), nn)
    node = np.repeat(np.arange(nn), d)
    points = rule.nodes[node]
    coeffs, cond = _solve_nodal(span, points, dirs)
    return EnhancedBasis(
        k=k,
        d=d,
        kind="enhanced",
        span=span,
        dof_dir=dirs,
        dof_index=rule.index[node],
        axis_rules=[[gl] * d for _ in range(d)],
        coeffs=coeffs,
        vandermonde_cond=cond,
        nodes=rule.nodes,
        node_weights=rule.weights,
        node_index=rule.index,
    )


@lru_cache(maxsize=None)
def build_rt_basis(order: int, d: int) -> NodalBasis:
    """Nodal RT_order element (RT_{k-1} pairs with the order-k method)."""
    if order < 0:
        raise ValueError("RT order must be >= 0")
    span = build_rt_span(order, d)
    gl = gauss_lobatto_rule(order + 2)
    ga = gauss_rule(order + 1)
    axis_rules, dirs, index = [], [], []
    for j in range(d):
        rules = [gl if a == j else ga for a in range(d)]
        axis_rules.append(rules)
        for idx in itertools.product(*[range(len(r)) for r in rules]):
            dirs.append(j)
            index.append(idx)
    dirs = np.array(dirs)
    index = np.array(index, dtype=np.int64)
    points = np.array([[axis_rules[j][a].points[i] for a, i in enumerate(idx)] for j, idx in zip(dirs, index)])
    coeffs, cond = _solve_nodal(span, points, dirs)
    return NodalBasis(order + 1, d, "rt", span, dirs, index, axis_rules, coeffs, cond)


def eval_basis(basis: NodalBasis, x):
    return basis.eval(x)


def eval_divergence(basis: NodalBasis, x):
    return basis.div(x)


def lagrange_1d(nodes, x):
    """Lagrange polynomials on ``nodes`` and their derivatives at ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    L = np.ones((len(x), n))
    dL = np.zeros((len(x), n))
    for i in range(n):
        for m in range(n):
            if m == i:
                continue
            denom = nodes[i] - nodes[m]
            term = np.ones(len(x)) / denom
            for q in range(n):
                if q not in (i, m):
                    term *= (x - nodes[q]) / (nodes[i] - nodes[q])
            dL[:, i] += term
            L[:, i] *= (x - nodes[m]) / denom
    return L, dL


@dataclass
class TensorLagrangeBasis:
    """Scalar Q^{n-1} Lagrange basis on a tensor grid of 1D nodes.

    Node ordering is lexicographic, last axis fastest.
    """

    points1d: np.ndarray
    d: int

    def __post_init__(self):
        self.points1d = np.asarray(self.points1d, dtype=float)
        n = len(self.points1d)
        self.index = np.array(list(itertools.product(range(n), repeat=self.d)), dtype=np.int64)
        self.nodes = self.points1d[self.index]

    @property
    def order(self):
        return len(self.points1d) - 1

    def __len__(self):
        return len(self.index)

    def _factors(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = [lagrange_1d(self.points1d, x[:, a]) for a in range(self.d)]
        return [L[:, self.index[:, a]] for a, (L, _) in enumerate(out)], [
            dL[:, self.index[:, a]] for a, (_, dL) in enumerate(out)
        ]

    def eval(self, x):
        L, _ = self._factors(x)
        return np.prod(L, axis=0)

    def grad(self, x):
        """Reference gradients, shape (npts, nbasis, d)."""
        L, dL = self._factors(x)
        g = np.empty(L[0].shape + (self.d,))
        for a in range(self.d):
            g[..., a] = np.prod([dL[b] if b == a else L[b] for b in range(self.d)], axis=0)
        return g


PressureBasis = TensorLagrangeBasis


@lru_cache(maxsize=None)
def build_pressure_basis(k: int, d: int) -> TensorLagrangeBasis:
    """Q^{k-1} Lagrange basis at the k^d tensor Gauss points."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return TensorLagrangeBasis(gauss_rule(k).points, d)


# --- element self-checks ------------------------------------------------


def legendre_values(n, x):
    """P_0..P_n at x, shape (len(x), n+1)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((len(x), n + 1))
    out[:, 0] = 1.0
    if n >= 1:
        out[:, 1] = x
    for m in range(2, n + 1):
        out[:, m] = ((2 * m - 1) * x * out[:, m - 1] - (m - 1) * out[:, m - 2]) / m
    return out


def _legendre_tensor(degrees, pts):
    """Products of Legendre polynomials with per-axis max degrees."""
    cols = []
    for e in itertools.product(*[range(n + 1) for n in degrees]):
        v = np.ones(len(pts))
        for a, ea in enumerate(e):
            v = v * legendre_values(ea, pts[:, a])[:, ea]
        cols.append(v)
    return np.array(cols).T if cols else np.zeros((len(pts), 0))


def facet_points(d, f, pts_facet):
    """Embed facet-local points (n, d-1) onto local facet f of [-1,1]^d."""
    a, s = divmod(f, 2)
    out = np.empty((len(pts_facet), d))
    free = [b for b in range(d) if b != a]
    out[:, free] = pts_facet
    out[:, a] = 2.0 * s - 1.0
    return out


def _moment_functionals(d, facet_deg, interior_deg, nq):
    """Facet and interior moment DOFs as (kind, data) quadrature recipes.

    Facet tests span R^facet_deg (P in 2d, Q in 3d). Interior tests for
    component j span P^interior_deg(x_j) x R^facet_deg(other axes).
    Returns a function mapping a vector-valued callable to moment values.
    """
    rule = gauss_rule(nq)
    frule = tensor_rule(rule, d - 1) if d > 1 else None
    crule = tensor_rule(rule, d)

    def facet_tests(pts):
        if d == 2:
            return legendre_values(facet_deg, pts[:, 0])
        return _legendre_tensor([facet_deg] * (d - 1), pts)

    def apply(func):
        rows = []
        for f in range(2 * d):
            a, s = divmod(f, 2)
            x = facet_points(d, f, frule.nodes)
            vals = func(x)  # (nq, nfun, d)
            normal = (2.0 * s - 1.0) * vals[:, :, a]
            rows.append(np.einsum("q,qt,qn->tn", frule.weights, facet_tests(frule.nodes), normal))
        if interior_deg >= 0:
            vals = func(crule.nodes)
            for j in range(d):
                degs = [interior_deg if a == j else facet_deg for a in range(d)]
                tests = _legendre_tensor(degs, crule.nodes)
                rows.append(np.einsum("q,qt,qn->tn", crule.weights, tests, vals[:, :, j]))
        return np.vstack(rows)

    return apply


def moment_dof_matrix(k: int, d: int, span: PolySpan | None = None):
    """Moment DOFs of the enhanced element applied to its span terms."""
    span = span or enhanced_span(k, d)
    apply = _moment_functionals(d, k, k - 2, k + 3)
    return apply(span.evaluate)


def gl_dof_matrix(k: int, d: int, span: PolySpan | None = None):
    span = span or enhanced_span(k, d)
    rule = tensor_rule(gauss_lobatto_rule(k + 1), d)
    vals = span.evaluate(rule.nodes)  # (nn, nterms, d)
    return vals.transpose(0, 2, 1).reshape(-1, len(span))


def direct_sum_rank(k: int, d: int, npts: int = 400, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(npts, d))
    rt = build_rt_span(k - 1, d).evaluate(x)
    bub = build_bubble_span(k, d).evaluate(x)
    M = np.concatenate([rt, bub], axis=1).transpose(0, 2, 1).reshape(-1, rt.shape[1] + bub.shape[1])
    return int(np.linalg.matrix_rank(M)), rt.shape[1], bub.shape[1]


def divergence_residual(basis: NodalBasis, npts: int | None = None):
    """Largest least-squares residual of div(basis) outside Q^{k-1}."""
    k, d = basis.k, basis.d
    x = tensor_rule(gauss_rule(k + 3), d).nodes
    div = basis.div(x)
    Q = _legendre_tensor([k - 1] * d, x)
    coef, *_ = np.linalg.lstsq(Q, div, rcond=None)
    scale = max(1.0, np.abs(div).max())
    return float(np.abs(div - Q @ coef).max() / scale)


def facet_trace_residual(basis: NodalBasis):
    """Largest residual of normal traces outside R^k on the facets."""
    k, d = basis.k, basis.d
    pts1 = np.linspace(-1, 1, k + 2)
    fp = np.array(list(itertools.product(pts1, repeat=d - 1)))
    worst = 0.0
    for f in range(2 * d):
        a, _ = divmod(f, 2)
        vals = basis.eval(facet_points(d, f, fp))[:, :, a]
        if d == 2:
            R = legendre_values(k, fp[:, 0])
        else:
            R = _legendre_tensor([k] * (d - 1), fp)
        coef, *_ = np.linalg.lstsq(R, vals, rcond=None)
        worst = max(worst, float(np.abs(vals - R @ coef).max()))
    return worst


def rt_projection(k: int, d: int, func):
    """Coefficients on the RT_{k-1} span of the canonical interpolant of func.

    Uses facet moments against R^{k-1} and interior moments against
    P^{k-2} x R^{k-1}, all with Gauss quadrature of k+3 points.
    """
    span = build_rt_span(k - 1, d)
    apply = _moment_functionals(d, k - 1, k - 2, k + 3)
    M = apply(span.evaluate)
    rhs = apply(func)
    return span, np.linalg.solve(M, rhs)


def quadrature_orthogonality_residual(k: int, d: int):
    """max |(q - Pi_RT q, v)_Q| over nodal basis q and Legendre v in Q^{k-1}."""
    basis = build_nodal_basis(k, d)
    span, c = rt_projection(k, d, basis.eval)
    rule = tensor_rule(gauss_lobatto_rule(k + 1), d)
    diff = basis.eval(rule.nodes) - np.einsum("ptc,tn->pnc", span.evaluate(rule.nodes), c)
    tests = _legendre_tensor([k - 1] * d, rule.nodes)  # (nq, nt)
    res = np.einsum("q,qt,qnc->tnc", rule.weights, tests, diff)
    return float(np.abs(res).max())


@dataclass
class ElementReport:
    k: int
    d: int
    dim: int
    expected_dim: int
    gl_cond: float
    moment_cond: float
    direct_sum_rank: int
    rt_dim: int
    bubble_dim: int
    div_residual: float
    trace_residual: float
    quad_orth_residual: float
    cond_limit: float = 1e10
    residual_limit: float = 1e-10

    @property
    def checks(self):
        return {
            "dimension": self.dim == self.expected_dim,
            "gl_unisolvent": self.gl_cond < self.cond_limit,
            "moment_unisolvent": self.moment_cond < self.cond_limit,
            "direct_sum": self.direct_sum_rank == self.rt_dim + self.bubble_dim,
            "divergence_in_Q": self.div_residual < self.residual_limit,
            "facet_trace": self.trace_residual < self.residual_limit,
            "quadrature_orthogonality": self.quad_orth_residual < self.residual_limit,
        }

    @property
    def ok(self):
        return all(self.checks.values())


def element_report(k: int, d: int) -> ElementReport:
    span = enhanced_span(k, d)
    basis = build_nodal_basis(k, d)
    rank, nrt, nb = direct_sum_rank(k, d)
    return ElementReport(
        k=k,
        d=d,
        dim=len(span),
        expected_dim=d * (k + 1) ** d,
        gl_cond=float(np.linalg.cond(gl_dof_matrix(k, d, span))),
        moment_cond=float(np.linalg.cond(moment_dof_matrix(k, d, span))),
        direct_sum_rank=rank,
        rt_dim=nrt,
        bubble_dim=nb,
        div_residual=divergence_residual(basis),
        trace_residual=facet_trace_residual(basis),
        quad_orth_residual=quadrature_orthogonality_residual(k, d),
    )


__all__ = [
    "PolySpan",
    "NodalBasis",
    "EnhancedBasis",
    "TensorLagrangeBasis",
    "PressureBasis",
    "ElementError",
    "Rule1D",
    "build_bubble_span",
    "build_rt_span",
    "enhanced_span",
    "build_nodal_basis",
    "build_rt_basis",
    "build_pressure_basis",
    "eval_basis",
    "eval_divergence",
    "element_report",
]
