"""Quadrature rules on the sphere, the interval and the annulus [delta, 1] x S^2."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule

from .specfun import legendre_table

# number of points -> exactly integrated degree
LEBEDEV_ORDERS = {
    6: 3, 14: 5, 26: 7, 38: 9, 50: 11, 74: 13, 86: 15, 110: 17, 146: 19,
    170: 21, 194: 23, 230: 25, 266: 27, 302: 29, 350: 31, 434: 35, 590: 41,
    770: 47, 974: 53, 1202: 59,
}


@dataclass(frozen=True, eq=False)
class LebedevRule:
    points: np.ndarray  # (n, 3) unit vectors
    weights: np.ndarray  # (n,), sum 4 pi
    order: int

    @property
    def n(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class LglRule:
    nodes: np.ndarray  # ascending, in [-1, 1]
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.nodes.size


@lru_cache(maxsize=None)
def lebedev(n_points: int) -> LebedevRule:
    """Lebedev rule with ``n_points`` nodes, weights normalized to 4 pi."""
    if n_points not in LEBEDEV_ORDERS:
        raise ValueError(
            f"unsupported Lebedev size {n_points}; supported: {sorted(LEBEDEV_ORDERS)}")
    order = LEBEDEV_ORDERS[n_points]
    x, w = lebedev_rule(order)
    pts = np.ascontiguousarray(x.T)
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    w = w * (4.0 * np.pi / w.sum())
    pts.setflags(write=False)
    w.setflags(write=False)
    return LebedevRule(pts, w, order)


@lru_cache(maxsize=None)
def lgl(n: int) -> LglRule:
    """Legendre-Gauss-Lobatto rule with ``n`` nodes (exact to degree 2n-3)."""
    if n < 2:
        raise ValueError("LGL rule needs at least 2 nodes")
    N = n - 1
    # Chebyshev-Gauss-Lobatto starting guesses, refined by Newton on the
    # interior roots of (1-x^2) L_N'(x)
    x = -np.cos(np.pi * np.arange(n) / N)
    interior = x[1:-1].copy()
    for _ in range(100):
        P, dP, d2P = legendre_table(N, interior)
        f, df = dP[:, N], d2P[:, N]
        step = f / df
        interior -= step
        if np.max(np.abs(step), initial=0.0) < 1e-14:
            break
    x[1:-1] = interior
    x[0], x[-1] = -1.0, 1.0
    # enforce exact symmetry
    x = 0.5 * (x - x[::-1])
    P, _, _ = legendre_table(N, x)
    w = 2.0 / (N * (N + 1) * P[:, N] ** 2)
    x.setflags(write=False)
    w.setflags(write=False)
    return LglRule(x, w)


def annulus_nodes(delta: float, rule: LglRule):
    """Radial nodes r_m on [delta, 1] and the radial weights (1-delta)/2 w_m r_m^2."""
    r = delta + (1.0 - delta) * (rule.nodes + 1.0) / 2.0
    return r, 0.5 * (1.0 - delta) * rule.weights * r * r


def annulus_integrate(h, delta: float, leb: LebedevRule, rule: LglRule) -> float:
    """Integrate ``h(r, s)`` over the shell delta <= |y| <= 1.

    ``h`` is called with the radial nodes of shape (n_lgl, 1) and the unit
    directions of shape (1, n_leb, 3) and must broadcast to (n_lgl, n_leb).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    r, wr = annulus_nodes(delta, rule)
    vals = np.broadcast_to(h(r[:, None], leb.points[None, :, :]), (r.size, leb.n))
    return float(wr @ vals @ leb.weights)
