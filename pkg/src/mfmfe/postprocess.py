"""Elementwise Q^k pressure reconstruction from (u_h, p_h).

On each cell p* solves (grad p*, grad q) = -(K^{-1} u_h, grad q) for q in
the complement of constants in Q^k, and then a constant shift makes the
cell mean of p* equal to that of p_h.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, cell_geometry
from .quadrature import gauss_lobatto_rule, gauss_rule, tensor_rule
from .refbasis import TensorLagrangeBasis


@dataclass
class PostprocessedPressure:
    mesh: Mesh
    basis: TensorLagrangeBasis  # Q^k Lagrange basis on [-1,1]^d
    coeffs: np.ndarray  # (nc, (k+1)^d) nodal values

    def cell_means(self, nq=None):
        rule = tensor_rule(gauss_rule(nq or self.basis.order + 2), self.mesh.dim)
        _, _, J = cell_geometry(self.mesh, rule.nodes)
        vals = self.coeffs @ self.basis.eval(rule.nodes).T
        wJ = J * rule.weights
        return (wJ * vals).sum(1) / wJ.sum(1)


def postprocess_basis(k: int, d: int) -> TensorLagrangeBasis:
    return TensorLagrangeBasis(gauss_lobatto_rule(k + 1).points, d)


def postprocess(solution, K=None, quad_order: int | None = None) -> PostprocessedPressure:
    from .verify import pressure_at, velocity_at

    mesh, k = solution.mesh, solution.k
    d = mesh.dim
    K = K or solution.K
    qb = postprocess_basis(k, d)
    rule = tensor_rule(gauss_rule(quad_order or k + 3), d)
    x, uh, _, J = velocity_at(solution, rule.nodes)
    _, DF, _ = cell_geometry(mesh, rule.nodes)
    Finv = np.linalg.inv(DF)
    # physical gradients DF^{-T} grad_hat, complement of constants only
    g = np.matmul(qb.grad(rule.nodes)[None, :, 1:, :], Finv)  # (e, q, n-1, d)
    wJ = J * rule.weights
    Kinv_u = np.linalg.solve(K(x), uh[..., None])[..., 0]
    ne, nq, nb, d = g.shape
    gt = g.transpose(0, 2, 1, 3).reshape(ne, nb, nq * d)
    gw = (g * wJ[:, :, None, None]).transpose(0, 1, 3, 2).reshape(ne, nq * d, nb)
    M = gt @ gw
    rhs = -(gt @ (wJ[..., None] * Kinv_u).reshape(ne, nq * d, 1))[..., 0]
    c = np.linalg.solve(M, rhs[..., None])[..., 0]

    phi = qb.eval(rule.nodes)  # (q, n)
    vol = wJ.sum(1)
    mean_phi = (wJ @ phi[:, 1:]) / vol[:, None]
    ph = pressure_at(solution, rule.nodes)
    mean_ph = (wJ * ph).sum(1) / vol
    shift = mean_ph - (c * mean_phi).sum(1)
    coeffs = np.empty((mesh.ncells, len(qb)))
    coeffs[:, 0] = shift
    coeffs[:, 1:] = c + shift[:, None]
    return PostprocessedPressure(mesh, qb, coeffs)


def evaluate_postprocessed(pstar: PostprocessedPressure, xi):
    return pstar.coeffs @ pstar.basis.eval(xi).T
