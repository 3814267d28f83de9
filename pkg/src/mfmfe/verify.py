"""Manufactured solutions, error norms and observed rates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh, cell_geometry
from .quadrature import gauss_rule, tensor_rule
from .refbasis import build_pressure_basis


@dataclass
class ManufacturedCase:
    """Exact pressure, its derivatives and the permeability.

    ``div_K(x)`` returns the vector with entries sum_i d_i K_ij (the
    divergence of the rows of K), needed for the source term.
    """

    name: str
    dim: int
    p: Callable
    grad_p: Callable
    hess_p: Callable
    K: Callable
    div_K: Callable

    def u(self, x):
        return -np.einsum("...ij,...j->...i", self.K(x), self.grad_p(x))

    def f(self, x):
        # f = div u = -(sum_ij dK_ij/dx_i dp/dx_j + K_ij d2p/dx_i dx_j)
        gp = self.grad_p(x)
        return -(
            np.einsum("...j,...j->...", self.div_K(x), gp)
            + np.einsum("...ij,...ij->...", self.K(x), self.hess_p(x))
        )

    def g(self, x):
        return self.p(x)


def _stack(rows):
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def example1_case() -> ManufacturedCase:
    def p(X):
        x, y = X[..., 0], X[..., 1]
        return x**3 * y**4 + x**2 + 0.5 * np.sin(2 * x * y)

    def grad_p(X):
        x, y = X[..., 0], X[..., 1]
        c = np.cos(2 * x * y)
        return np.stack([3 * x**2 * y**4 + 2 * x + y * c, 4 * x**3 * y**3 + x * c], axis=-1)

    def hess_p(X):
        x, y = X[..., 0], X[..., 1]
        s, c = np.sin(2 * x * y), np.cos(2 * x * y)
        pxx = 6 * x * y**4 + 2 - 2 * y**2 * s
        pyy = 12 * x**3 * y**2 - 2 * x**2 * s
        pxy = 12 * x**2 * y**3 + c - 2 * x * y * s
        return _stack([[pxx, pxy], [pxy, pyy]])

    def K(X):
        x, y = X[..., 0], X[..., 1]
        s = np.sin(x * y)
        return _stack([[(x + 1) ** 2 + y**2, s], [s, (x + 1) ** 2]])

    def div_K(X):
        x, y = X[..., 0], X[..., 1]
        c = np.cos(x * y)
        # column sums of the derivative: sum_i d_i K_ij
        return np.stack([2 * (x + 1) + x * c, y * c], axis=-1)

    return ManufacturedCase("example1", 2, p, grad_p, hess_p, K, div_K)


def example2_case() -> ManufacturedCase:
    def p(X):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        return x**4 * y**3 + x**2 + y * z**2 + np.cos(x * y) + np.sin(z)

    def grad_p(X):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        s = np.sin(x * y)
        return np.stack(
            [4 * x**3 * y**3 + 2 * x - y * s, 3 * x**4 * y**2 + z**2 - x * s, 2 * y * z + np.cos(z)],
            axis=-1,
        )

    def hess_p(X):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        s, c = np.sin(x * y), np.cos(x * y)
        pxx = 12 * x**2 * y**3 + 2 - y**2 * c
        pyy = 6 * x**4 * y - x**2 * c
        pzz = 2 * y - np.sin(z)
        pxy = 12 * x**3 * y**2 - s - x * y * c
        pxz = np.zeros_like(x)
        pyz = 2 * z
        return _stack([[pxx, pxy, pxz], [pxy, pyy, pyz], [pxz, pyz, pzz]])

    def K(X):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        s, c = np.sin(x * y), np.cos(x * y)
        zero = np.zeros_like(x)
        return _stack(
            [
                [x**2 + (y + 2) ** 2, zero, c],
                [zero, z**2 + 2, s],
                [c, s, (y + 3) ** 2],
            ]
        )

    def div_K(X):
        x, y = X[..., 0], X[..., 1]
        # sum_i d_i K_ij: j=0: d_x K00; j=1: d_y K11 = 0; j=2: d_x K02 + d_y K12
        return np.stack(
            [2 * x, np.zeros_like(x), -y * np.sin(x * y) + x * np.cos(x * y)], axis=-1
        )

    return ManufacturedCase("example2", 3, p, grad_p, hess_p, K, div_K)


def linear_case(d: int, a=None, c=0.3, K=None) -> ManufacturedCase:
    """Constant SPD K with p = a.x + c, so u is constant and f = 0."""
    a = np.asarray(a if a is not None else [1.0, -2.0, 0.5][:d], dtype=float)
    Kc = np.asarray(K if K is not None else np.eye(d) + 0.3 * (np.ones((d, d)) - np.eye(d)), dtype=float)

    def p(X):
        return X @ a + c

    def grad_p(X):
        return np.broadcast_to(a, X.shape).copy()

    def hess_p(X):
        return np.zeros(X.shape + (d,))

    def Kf(X):
        return np.broadcast_to(Kc, X.shape[:-1] + (d, d)).copy()

    def div_K(X):
        return np.zeros(X.shape)

    return ManufacturedCase(f"linear{d}d", d, p, grad_p, hess_p, Kf, div_K)


CASES = {1: example1_case, 2: example2_case}


def check_case(case: ManufacturedCase, npts=20, step=1e-5, seed=0):
    """Finite-difference residuals of grad p, div u against the callables."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, size=(npts, case.dim))
    eye = np.eye(case.dim)
    fd_grad = np.stack(
        [(case.p(x + step * e) - case.p(x - step * e)) / (2 * step) for e in eye], axis=-1
    )
    fd_div = sum(
        (case.u(x + step * e)[:, i] - case.u(x - step * e)[:, i]) / (2 * step)
        for i, e in enumerate(eye)
    )
    scale = 1.0 + np.abs(case.f(x)).max()
    return {
        "grad": float(np.abs(fd_grad - case.grad_p(x)).max()),
        "div": float(np.abs(fd_div - case.f(x)).max() / scale),
        "darcy": float(np.abs(case.u(x) + np.einsum("nij,nj->ni", case.K(x), case.grad_p(x))).max()),
    }


@dataclass
class ErrorRecord:
    level: int
    h: float
    err_u: float
    err_div: float
    err_p: float
    err_pG: float
    err_qp: float
    err_pstar: float
    rate_u: float = math.nan
    rate_div: float = math.nan
    rate_p: float = math.nan
    rate_pG: float = math.nan
    rate_qp: float = math.nan
    rate_pstar: float = math.nan
    case: str = ""
    k: int = 0
    method: str = "mfmfe"
    cg_iters: int = 0
    assemble_s: float = 0.0
    solve_s: float = 0.0


ERROR_NAMES = ("u", "div", "p", "pG", "qp", "pstar")
CSV_COLUMNS = (
    ["level", "h"]
    + [c for n in ERROR_NAMES for c in (f"err_{n}", f"rate_{n}")]
    + ["cg_iters", "assemble_s", "solve_s"]
)


def velocity_at(solution, xi):
    """Physical u_h and div u_h per cell at reference points.

    Returns x, u_h (nc, nq, d), div u_h (nc, nq), J (nc, nq).
    """
    dm, basis = solution.dofmap, solution.basis
    coef = np.where(dm.cell_dofs >= 0, solution.U[np.maximum(dm.cell_dofs, 0)], 0.0) * dm.cell_signs
    x, DF, J = cell_geometry(solution.mesh, xi)
    V = basis.eval(xi)  # (q, l, c)
    nq, nl, d = V.shape
    vhat = (coef @ V.transpose(1, 0, 2).reshape(nl, nq * d)).reshape(-1, nq, d)
    u = np.matmul(DF, vhat[..., None])[..., 0] / J[..., None]
    div = (coef @ basis.div(xi).T) / J
    return x, u, div, J


def pressure_at(solution, xi):
    pb = build_pressure_basis(solution.k, solution.mesh.dim)
    return solution.P[solution.dofmap.cell_pressure] @ pb.eval(xi).T


def l2_projection(mesh: Mesh, k: int, func, nq: int):
    """Cellwise L2 projection onto mapped Q^{k-1}; nodal coefficients (nc, npl)."""
    pb = build_pressure_basis(k, mesh.dim)
    rule = tensor_rule(gauss_rule(nq), mesh.dim)
    x, _, J = cell_geometry(mesh, rule.nodes)
    phi = pb.eval(rule.nodes)  # (q, a)
    wJ = J * rule.weights
    M = np.einsum("eq,qa,qb->eab", wJ, phi, phi)
    rhs = np.einsum("eq,eq,qa->ea", wJ, func(x), phi)
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def error_norms(solution, case: ManufacturedCase, quad_order: int | None = None, level: int = 0, h=None, pstar=None):
    """Relative errors of a discrete solution against ``case``."""
    from .postprocess import evaluate_postprocessed, postprocess

    mesh, k = solution.mesh, solution.k
    d = mesh.dim
    nq = quad_order or k + 3
    rule = tensor_rule(gauss_rule(nq), d)
    x, uh, divh, J = velocity_at(solution, rule.nodes)
    wJ = J * rule.weights

    def rel(diff, ref):
        # absolute error when the exact field vanishes (e.g. f = 0)
        den = np.sum(wJ * ref)
        return math.sqrt(np.sum(wJ * diff) / (den if den > 0 else 1.0))

    u = case.u(x)
    f = case.f(x)
    p = case.p(x)
    ph = pressure_at(solution, rule.nodes)
    err_u = rel(((u - uh) ** 2).sum(-1), (u**2).sum(-1))
    err_div = rel((f - divh) ** 2, f**2)
    err_p = rel((p - ph) ** 2, p**2)

    pb = build_pressure_basis(k, d)
    g = tensor_rule(gauss_rule(k), d)
    xg, _, Jg = cell_geometry(mesh, g.nodes)
    wg = Jg * g.weights
    pg = case.p(xg)
    phg = solution.P[solution.dofmap.cell_pressure] @ pb.eval(g.nodes).T
    err_pG = math.sqrt(np.sum(wg * (pg - phg) ** 2) / np.sum(wg * pg**2))

    qp = l2_projection(mesh, k, case.p, nq)
    diff = (qp - solution.P[solution.dofmap.cell_pressure]) @ pb.eval(rule.nodes).T
    err_qp = rel(diff**2, p**2)

    if pstar is None:
        pstar = postprocess(solution, quad_order=nq)
    ps = evaluate_postprocessed(pstar, rule.nodes)
    err_pstar = rel((p - ps) ** 2, p**2)
    return ErrorRecord(
        level=level,
        h=mesh.nominal_h if h is None and mesh.nominal_h else (h or mesh.h),
        err_u=err_u,
        err_div=err_div,
        err_p=err_p,
        err_pG=err_pG,
        err_qp=err_qp,
        err_pstar=err_pstar,
        case=case.name,
        k=k,
        method=solution.method,
    )


def rates(records: list) -> list:
    """Fill pairwise rates log(e_{l-1}/e_l) / log(h_{l-1}/h_l)."""
    if len(records) < 2:
        raise ValueError("rates need at least two levels")
    keys = {(r.case, r.k, r.method) for r in records}
    if len(keys) > 1:
        raise ValueError(f"records mix cases/orders/methods: {sorted(keys)}")
    for prev, cur in zip(records, records[1:]):
        for n in ERROR_NAMES:
            e0, e1 = getattr(prev, f"err_{n}"), getattr(cur, f"err_{n}")
            if e0 > 0 and e1 > 0:
                rate = math.log(e0 / e1) / math.log(prev.h / cur.h)
            else:
                rate = math.nan
            setattr(cur, f"rate_{n}", rate)
    return records


def fitted_rate(h, e):
    """Least-squares slope of log e against log h."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(e, dtype=float)
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


def record_row(rec: ErrorRecord):
    return [getattr(rec, c) for c in CSV_COLUMNS]


__all__ = [
    "ManufacturedCase",
    "ErrorRecord",
    "example1_case",
    "example2_case",
    "linear_case",
    "check_case",
    "error_norms",
    "rates",
    "fitted_rate",
    "CSV_COLUMNS",
    "ERROR_NAMES",
]
