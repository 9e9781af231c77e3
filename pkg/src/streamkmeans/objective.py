"""The k-means cost, its gradient, and the frozen-cell quadratic surrogate.

For a density ``p`` and centers ``w``::

    f(w)      = 1/2 * sum_i int_{V_i(w)}  ||w_i - x||^2 p(x) dx
    g(w; w')  = 1/2 * sum_i int_{V_i(w')} ||w_i - x||^2 p(x) dx
    grad_i f  = P_i(w) * (w_i - M_i(w))

``g(.; w')`` is quadratic with block-diagonal Hessian ``P_i(w') I``, it
dominates ``f`` everywhere and touches it at ``w = w'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CapabilityError, DegenerateCentersError, as_centers, require_nondegenerate
from .distributions import Distribution, MomentOracle, Moments, voronoi_moments

__all__ = [
    "CostValue",
    "GradientValue",
    "QuadraticBound",
    "cost",
    "gradient",
    "gradient_from_moments",
    "fd_gradient",
    "surrogate_cost",
    "surrogate_gradient",
    "quadratic_bound",
]


@dataclass(frozen=True)
class CostValue:
    value: float
    method: str
    stderr: Optional[float] = None

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class GradientValue:
    vectors: np.ndarray  # (k, d)

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.vectors**2, axis=1))

    @property
    def total_norm(self) -> float:
        return float(np.sqrt(np.sum(self.vectors**2)))


@dataclass(frozen=True)
class QuadraticBound:
    """Tangent quadratic upper bounds on ``f(w_plus)`` around ``w``.

    ``hessian`` uses the surrogate Hessian ``diag(P_i(w) I)``; ``identity``
    replaces it by the identity, which is looser since ``P_i <= 1``.
    """

    hessian: float
    identity: float


def cost(dist: Distribution, w, oracle: Optional[MomentOracle] = None) -> CostValue:
    m = voronoi_moments(dist, w, oracle)
    return CostValue(max(m.cost, 0.0), m.method, m.cost_stderr)


def gradient_from_moments(w, m: Moments) -> np.ndarray:
    w = as_centers(w)
    g = m.masses[:, None] * (w.points - m.means)
    g[~m.defined] = 0.0
    return g


def gradient(dist: Distribution, w, oracle: Optional[MomentOracle] = None) -> GradientValue:
    """Analytic gradient ``P_i(w) (w_i - M_i(w))``; empty cells contribute zero."""
    w = as_centers(w)
    return GradientValue(gradient_from_moments(w, voronoi_moments(dist, w, oracle)))


def fd_gradient(dist: Distribution, w, oracle: Optional[MomentOracle] = None, h: float = 1e-5) -> GradientValue:
    """Central finite differences of :func:`cost`, coordinate by coordinate.

    Requires the exact oracle; MC noise swamps differences at small ``h``.
    """
    oracle = oracle or MomentOracle()
    if oracle.method != "exact":
        raise CapabilityError("finite-difference gradients need the exact oracle")
    w = require_nondegenerate(w)
    pts = w.points
    grad = np.zeros_like(pts)
    for i in range(w.k):
        for j in range(w.d):
            plus = pts.copy()
            minus = pts.copy()
            plus[i, j] += h
            minus[i, j] -= h
            try:
                fp = cost(dist, plus, oracle).value
                fm = cost(dist, minus, oracle).value
            except DegenerateCentersError as exc:
                raise DegenerateCentersError(f"step h={h} makes the centers degenerate; reduce h") from exc
            grad[i, j] = (fp - fm) / (2 * h)
    return GradientValue(grad)


def surrogate_cost(dist: Distribution, w, w_ref, oracle: Optional[MomentOracle] = None) -> CostValue:
    """``g(w; w_ref)``: the cost of ``w`` with cells frozen at ``w_ref``."""
    m = voronoi_moments(dist, w_ref, oracle, w_eval=w)
    return CostValue(max(m.cost, 0.0), m.method, m.cost_stderr)


def surrogate_gradient(dist: Distribution, w, w_ref, oracle: Optional[MomentOracle] = None) -> GradientValue:
    """Gradient of ``g(.; w_ref)`` at ``w``: ``P_i(w_ref) (w_i - M_i(w_ref))``."""
    w = as_centers(w)
    m = voronoi_moments(dist, w_ref, oracle)
    g = m.masses[:, None] * (w.points - m.means)
    g[~m.defined] = 0.0
    return GradientValue(g)


def quadratic_bound(dist: Distribution, w_plus, w, oracle: Optional[MomentOracle] = None) -> QuadraticBound:
    w = as_centers(w)
    w_plus = as_centers(w_plus)
    m = voronoi_moments(dist, w, oracle)
    g = gradient_from_moments(w, m)
    step = w_plus.points - w.points
    lin = m.cost + float(np.sum(g * step))
    sq = np.sum(step**2, axis=1)
    return QuadraticBound(
        hessian=lin + 0.5 * math.fsum(m.masses * sq),
        identity=lin + 0.5 * math.fsum(sq),
    )
