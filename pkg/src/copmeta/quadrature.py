"""Gauss-Legendre rules on (0, 1) and dependent node grids.

The likelihood integrals over the copula are evaluated by pushing a fixed
set of independent Gauss-Legendre nodes through conditional copula
inverses, so that the same nodes and weights serve every parameter value
and numerical derivatives of the log-likelihood stay smooth.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .copula import CopulaSpec, cond_inverse_1given2, cond_inverse_2given1

DEFAULT_NQ = 21
MAX_NQ = 200


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuadRule:
    """Nodes and weights of an n-point Gauss-Legendre rule on (0, 1)."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _legendre_newton(n: int):
    """Positive roots of P_n on (-1, 1) and their weights, by Newton iteration."""
    m = (n + 1) // 2
    x = np.cos(np.pi * (np.arange(1, m + 1) - 0.25) / (n + 0.5))
    for _ in range(100):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        # p1 = P_n(x), p0 = P_{n-1}(x)
        dp = n * (x * p1 - p0) / (x * x - 1.0)
        dx = p1 / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    return x, w


@lru_cache(maxsize=64)
def gauss_legendre_01(n_q: int = DEFAULT_NQ) -> QuadRule:
    """Gauss-Legendre rule with ``n_q`` nodes mapped to the unit interval.

    Nodes are returned in increasing order and are exactly symmetric about
    0.5; the weights sum to one.
    """
    if isinstance(n_q, bool) or not isinstance(n_q, (int, np.integer)):
        raise ValueError(f"n_q must be an integer, got {n_q!r}")
    if not 1 <= n_q <= MAX_NQ:
        raise ValueError(f"n_q must be in [1, {MAX_NQ}], got {n_q}")
    n_q = int(n_q)
    if n_q == 1:
        return QuadRule(_frozen([0.5]), _frozen([1.0]))
    x, w = _legendre_newton(n_q)
    # x is decreasing in (0, 1]; the lower half of (0, 1) comes from -x
    lower = 0.5 * (1.0 - x)
    half_w = 0.5 * w
    m = n_q // 2
    nodes = np.empty(n_q)
    weights = np.empty(n_q)
    nodes[:m] = lower[:m]
    weights[:m] = half_w[:m]
    nodes[n_q - m:] = 1.0 - lower[:m][::-1]
    weights[n_q - m:] = half_w[:m][::-1]
    if n_q % 2:
        nodes[m] = 0.5
        weights[m] = half_w[m]
    return QuadRule(_frozen(nodes), _frozen(weights))


@dataclass(frozen=True, eq=False)
class DependentNodes2:
    """Node grid for a bivariate copula.

    ``u2_given_u1[q1, q2]`` is the conditional inverse of the copula at
    ``nodes[q2]`` given ``u1_grid[q1]``.
    """

    u1_grid: np.ndarray
    u2_given_u1: np.ndarray


@dataclass(frozen=True, eq=False)
class DependentNodes3:
    """Node grids for a C-vine truncated after its first tree.

    Because the conditional copula of the two leaves given the root is the
    independence copula, the third coordinate does not depend on the second
    index and is stored as an ``n_q x n_q`` matrix ``v3_given_1``.
    """

    v1: np.ndarray
    v2_given_1: np.ndarray
    v3_given_1: np.ndarray

    @property
    def v3_given_12(self) -> np.ndarray:
        """Full ``(q1, q2, q3)`` tensor view of the third coordinate."""
        n = len(self.v1)
        return np.broadcast_to(self.v3_given_1[:, None, :], (n, n, n))


def _identity_grid(nodes):
    return _frozen(np.broadcast_to(nodes, (len(nodes), len(nodes))))


def conditional_grid(rule: QuadRule, cop: CopulaSpec, root_first: bool = True) -> np.ndarray:
    """Matrix of conditional inverses ``[q_root, q_other]``.

    With ``root_first`` the conditioning variable is the copula's first
    argument; otherwise it is the second.
    """
    nodes = rule.nodes
    if cop.is_independence:
        return _identity_grid(nodes)
    cond = nodes[:, None]
    q = np.broadcast_to(nodes[None, :], (len(nodes), len(nodes)))
    if root_first:
        grid = cond_inverse_2given1(cop, q, cond)
    else:
        grid = cond_inverse_1given2(cop, q, cond)
    return _frozen(grid)


def dependent_nodes_bivariate(rule: QuadRule, cop: CopulaSpec) -> DependentNodes2:
    return DependentNodes2(rule.nodes, conditional_grid(rule, cop))


def dependent_nodes_trivariate(
    rule: QuadRule, cop12: CopulaSpec, cop13: CopulaSpec
) -> DependentNodes3:
    return DependentNodes3(
        rule.nodes,
        conditional_grid(rule, cop12),
        conditional_grid(rule, cop13),
    )
