"""One-dimensional Gauss and Gauss-Lobatto rules and their tensor products.

All rules live on [-1, 1]. Nodes are found by Newton iteration on Legendre
polynomials evaluated through the three-term recurrence.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

NEWTON_TOL = 1e-14
NEWTON_MAXIT = 100


@dataclass(frozen=True)
class Rule1D:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    kind: str = "gauss"

    def __len__(self):
        return len(self.points)

    def integrate(self, f):
        return float(np.dot(self.weights, f(self.points)))


@dataclass(frozen=True)
class RuleND:
    """Tensor-product rule; node ``i`` has per-axis indices ``index[i]``.

    Ordering is lexicographic with the last axis running fastest.
    """

    nodes: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    rule1d: Rule1D = field(repr=False)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def __len__(self):
        return len(self.weights)


def legendre(n, x):
    """Return (P_n(x), P_n'(x)) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for m in range(2, n + 1):
        p0, p1 = p1, ((2 * m - 1) * x * p1 - (m - 1) * p0) / m
    # derivative from P_n and P_{n-1}; endpoints handled separately
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (x * p1 - p0) / (x * x - 1.0)
    end = np.isclose(np.abs(x), 1.0, rtol=0.0, atol=1e-15)
    if np.any(end):
        dp = np.where(end, np.sign(x) ** (n + 1) * n * (n + 1) / 2.0, dp)
    return p1, dp


def _newton(f, x0):
    x = x0.copy()
    for _ in range(NEWTON_MAXIT):
        val, der = f(x)
        dx = val / der
        x -= dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    return x


def gauss_rule(n: int) -> Rule1D:
    """n-point Legendre-Gauss rule, exact to degree 2n-1."""
    if int(n) != n or n < 1:
        raise ValueError(f"Gauss rule needs n >= 1, got {n}")
    n = int(n)
    # Chebyshev-like initial guesses, ascending
    x0 = -np.cos(np.pi * (np.arange(n) + 0.75) / (n + 0.5))
    x = _newton(lambda t: legendre(n, t), x0)
    _, dp = legendre(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    if n % 2 == 1:
        x[n // 2] = 0.0
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return Rule1D(x, w, 2 * n - 1, "gauss")


def gauss_lobatto_rule(n: int) -> Rule1D:
    """n-point Gauss-Lobatto rule (endpoints included), exact to degree 2n-3."""
    if int(n) != n or n < 2:
        raise ValueError(f"Gauss-Lobatto rule needs n >= 2, got {n}")
    n = int(n)
    m = n - 1
    x = np.empty(n)
    x[0], x[-1] = -1.0, 1.0
    if n > 2:
        # interior nodes are the roots of P_m'; Newton on P_m' using
        # (1 - t^2) P_m'' = 2 t P_m' - m (m + 1) P_m
        def f(t):
            p, dp = legendre(m, t)
            ddp = (2 * t * dp - m * (m + 1) * p) / (1 - t * t)
            return dp, ddp

        x0 = -np.cos(np.pi * np.arange(1, n - 1) / m)
        x[1:-1] = _newton(f, x0)
    p, _ = legendre(m, x)
    w = 2.0 / (m * (m + 1) * p * p)
    if n % 2 == 1:
        x[n // 2] = 0.0
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return Rule1D(x, w, 2 * n - 3, "lobatto")


def tensor_rule(rule: Rule1D, d: int) -> RuleND:
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    n = len(rule)
    index = np.array(list(itertools.product(range(n), repeat=d)), dtype=np.int64)
    nodes = rule.points[index]
    weights = np.prod(rule.weights[index], axis=1)
    return RuleND(nodes, weights, index, rule)


def to_unit_interval(rule: Rule1D) -> Rule1D:
    """Affine copy of ``rule`` on [0, 1]."""
    return Rule1D(0.5 * (rule.points + 1.0), 0.5 * rule.weights, rule.exactness_degree, rule.kind)
