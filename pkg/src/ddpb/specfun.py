"""Special functions for spectral discretizations on the unit ball.

Real orthonormal spherical harmonics (with surface gradients), modified
spherical Bessel functions of both kinds and the ratios built from them,
Legendre polynomials, and the radial basis used on the annulus [delta, 1].

Spherical harmonics are indexed by the flat index ``p = l*l + l + m``.
The Bessel normalization is i_l(x) = sqrt(pi/(2x)) I_{l+1/2}(x) and
k_l(x) = sqrt(2/(pi x)) K_{l+1/2}(x), so that k_0(x) = exp(-x)/x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_OVERFLOW = 700.0


@dataclass(frozen=True)
class HarmonicIndex:
    l: int
    m: int

    def __post_init__(self):
        if self.l < 0 or abs(self.m) > self.l:
            raise ValueError(f"invalid harmonic index (l={self.l}, m={self.m})")

    @property
    def flat(self) -> int:
        return self.l * self.l + self.l + self.m

    @classmethod
    def from_flat(cls, p: int) -> "HarmonicIndex":
        l = int(np.floor(np.sqrt(p)))
        return cls(l, p - l * l - l)


def n_harmonics(lmax: int) -> int:
    return (lmax + 1) ** 2


def degrees(lmax: int) -> np.ndarray:
    """Degree l of every flat harmonic index up to ``lmax``."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(lmax + 1)])


# ---------------------------------------------------------------------------
# spherical harmonics


def solid_harmonics(lmax: int, x, grad: bool = False):
    """Real regular solid harmonics S_lm(x) for points ``x`` of shape (n, 3).

    Normalized so that Y_lm(s) = sqrt((2l+1)/(4 pi)) S_lm(s) on the unit
    sphere. Returns an (n, nY) array, plus the (n, nY, 3) Cartesian
    gradient when ``grad`` is set. The recurrence is polynomial in x, so
    there is no singularity at the poles.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    nY = n_harmonics(lmax)
    X, Yc, Z = x[:, 0], x[:, 1], x[:, 2]
    r2 = X * X + Yc * Yc + Z * Z
    S = np.zeros((n, nY))
    dS = np.zeros((n, nY, 3)) if grad else None
    S[:, 0] = 1.0
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])

    def idx(l, m):
        return l * l + l + m

    for l in range(lmax):
        # sectoral terms
        fac = np.sqrt((2.0 if l == 0 else 1.0) * (2 * l + 1) / (2 * l + 2))
        pc, ps = idx(l, l), idx(l, -l)
        if l == 0:
            S[:, idx(1, 1)] = fac * X * S[:, pc]
            S[:, idx(1, -1)] = fac * Yc * S[:, pc]
            if grad:
                dS[:, idx(1, 1)] = fac * (X[:, None] * dS[:, pc] + S[:, pc, None] * ex)
                dS[:, idx(1, -1)] = fac * (Yc[:, None] * dS[:, pc] + S[:, pc, None] * ey)
        else:
            S[:, idx(l + 1, l + 1)] = fac * (X * S[:, pc] - Yc * S[:, ps])
            S[:, idx(l + 1, -l - 1)] = fac * (Yc * S[:, pc] + X * S[:, ps])
            if grad:
                dS[:, idx(l + 1, l + 1)] = fac * (
                    X[:, None] * dS[:, pc] + S[:, pc, None] * ex
                    - Yc[:, None] * dS[:, ps] - S[:, ps, None] * ey)
                dS[:, idx(l + 1, -l - 1)] = fac * (
                    Yc[:, None] * dS[:, pc] + S[:, pc, None] * ey
                    + X[:, None] * dS[:, ps] + S[:, ps, None] * ex)
        # vertical recurrence for |m| <= l
        for m in range(-l, l + 1):
            a = np.sqrt((l + m + 1.0) * (l - m + 1.0))
            b = np.sqrt((l + m) * (l - m)) if l > abs(m) else 0.0
            cur = idx(l, m)
            new = (2 * l + 1) * Z * S[:, cur]
            if b:
                new = new - b * r2 * S[:, idx(l - 1, m)]
            S[:, idx(l + 1, m)] = new / a
            if grad:
                dnew = (2 * l + 1) * (Z[:, None] * dS[:, cur] + S[:, cur, None] * ez)
                if b:
                    prev = idx(l - 1, m)
                    dnew = dnew - b * (r2[:, None] * dS[:, prev] + 2.0 * x * S[:, prev, None])
                dS[:, idx(l + 1, m)] = dnew / a
    norm = np.sqrt((2 * degrees(lmax) + 1) / (4 * np.pi))
    S *= norm
    if grad:
        dS *= norm[None, :, None]
        return S, dS
    return S


def _check_unit(s, tol=1e-12):
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if np.any(np.abs(np.linalg.norm(s, axis=1) - 1.0) > tol):
        raise ValueError("direction vectors must have unit length")
    return s


def real_sph_harm(lmax: int, s) -> np.ndarray:
    """All real orthonormal harmonics Y_p(s) for unit vectors ``s`` (n, 3)."""
    return solid_harmonics(lmax, _check_unit(s))


def real_sph_harm_grad(lmax: int, s):
    """Harmonics and their tangential (surface) gradients at unit vectors.

    Returns Y of shape (n, nY) and grad_S Y of shape (n, nY, 3).
    """
    s = _check_unit(s)
    Y, dR = solid_harmonics(lmax, s, grad=True)
    l = degrees(lmax)
    # the solid harmonic is r^l Y, so grad R = grad_S Y + l Y s on |s| = 1
    gS = dR - (l[None, :] * Y)[:, :, None] * s[:, None, :]
    return Y, gS


def sph_harm(idx: HarmonicIndex, s) -> float:
    """Single real spherical harmonic Y_lm at the unit vector ``s``."""
    Y = real_sph_harm(idx.l, np.asarray(s, dtype=float).reshape(1, 3))
    return float(Y[0, idx.flat])


# ---------------------------------------------------------------------------
# modified spherical Bessel functions


def _scaled_i(l, x):
    """i_l(x) * exp(-x)."""
    return np.sqrt(np.pi / (2.0 * x)) * special.ive(l + 0.5, x)


def _scaled_k(l, x):
    """k_l(x) * exp(x)."""
    return np.sqrt(2.0 / (np.pi * x)) * special.kve(l + 0.5, x)


def bessel_i(l: int, x: float):
    """Modified spherical Bessel function of the first kind and its derivative."""
    if x < 0:
        raise ValueError("bessel_i requires x >= 0")
    if x == 0.0:
        return (1.0 if l == 0 else 0.0), (1.0 / 3.0 if l == 1 else 0.0)
    if x > LOG_OVERFLOW:
        raise OverflowError("i_l overflows; use i_ratio / i_logderiv")
    val = float(special.spherical_in(l, x))
    der = float(special.spherical_in(l, x, derivative=True))
    return val, der


def bessel_k(l: int, x: float):
    """Modified spherical Bessel function of the second kind, k_0 = exp(-x)/x."""
    if x <= 0:
        raise ValueError("bessel_k requires x > 0")
    c = 2.0 / np.pi
    val = c * float(special.spherical_kn(l, x))
    der = c * float(special.spherical_kn(l, x, derivative=True))
    return val, der


def i_logderiv(l: int, x: float) -> float:
    """i_l'(x)/i_l(x), stable for large x."""
    if x <= 0:
        raise ValueError("i_logderiv requires x > 0")
    if l == 0:
        return float(_scaled_i(1, x) / _scaled_i(0, x))
    return float(_scaled_i(l - 1, x) / _scaled_i(l, x) - (l + 1) / x)


def k_logderiv(l: int, x: float) -> float:
    """k_l'(x)/k_l(x), stable for large x."""
    if x <= 0:
        raise ValueError("k_logderiv requires x > 0")
    if l == 0:
        return float(-_scaled_k(1, x) / _scaled_k(0, x))
    return float(-_scaled_k(l - 1, x) / _scaled_k(l, x) - (l + 1) / x)


def i_ratio(lmax: int, kappa: float, r, R: float) -> np.ndarray:
    """i_l(kappa r)/i_l(kappa R) for l = 0..lmax; shape (len(r), lmax+1).

    Reduces to (r/R)^l when kappa = 0. Computed with exponentially scaled
    functions so large arguments do not overflow.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    ls = np.arange(lmax + 1)
    if kappa == 0.0:
        return (r[:, None] / R) ** ls[None, :]
    X = kappa * R
    x = kappa * r
    out = np.empty((r.size, lmax + 1))
    den = np.array([_scaled_i(l, X) for l in ls])
    pos = x > 0
    for l in ls:
        v = np.zeros(r.size)
        v[pos] = _scaled_i(l, x[pos]) / den[l] * np.exp(x[pos] - X)
        if l == 0:
            v[~pos] = np.exp(-X) / den[0]
        out[:, l] = v
    return out


def k_ratio(lmax: int, kappa: float, d, R: float) -> np.ndarray:
    """k_l(kappa d)/k_l(kappa R) for l = 0..lmax; (R/d)^(l+1) when kappa = 0."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    ls = np.arange(lmax + 1)
    if np.any(d <= 0):
        raise ValueError("k_ratio requires d > 0")
    if kappa == 0.0:
        return (R / d[:, None]) ** (ls[None, :] + 1)
    X = kappa * R
    x = kappa * d
    out = np.empty((d.size, lmax + 1))
    for l in ls:
        out[:, l] = _scaled_k(l, x) / _scaled_k(l, X) * np.exp(X - x)
    return out


def i_radial_logderiv(l: int, kappa: float, R: float) -> float:
    """d/dr log i_l(kappa r) at r = R; equals l/R when kappa = 0."""
    if kappa == 0.0:
        return l / R
    return kappa * i_logderiv(l, kappa * R)


def k_radial_logderiv(l: int, kappa: float, R: float) -> float:
    """d/dr log k_l(kappa r) at r = R; equals -(l+1)/R when kappa = 0."""
    if kappa == 0.0:
        return -(l + 1) / R
    return kappa * k_logderiv(l, kappa * R)


def single_layer_factor(l: int, kappa: float, R: float) -> float:
    """Mode-l response of the screened single layer on a sphere of radius R.

    A surface density Y_lm on the sphere produces the potential
    C_l * k_l(kappa r)/k_l(kappa R) * Y_lm outside it, where
    C_l = 1 / (d/dr log i_l - d/dr log k_l) at r = R. The kappa -> 0
    limit is R/(2l+1).
    """
    return 1.0 / (i_radial_logderiv(l, kappa, R) - k_radial_logderiv(l, kappa, R))


# ---------------------------------------------------------------------------
# Legendre polynomials and the annulus radial basis


def legendre_table(kmax: int, t):
    """Values, first and second derivatives of L_0..L_kmax at ``t``.

    Each output has shape (len(t), kmax+1).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    P = np.zeros((t.size, kmax + 1))
    dP = np.zeros_like(P)
    d2P = np.zeros_like(P)
    P[:, 0] = 1.0
    if kmax >= 1:
        P[:, 1] = t
        dP[:, 1] = 1.0
    for k in range(1, kmax):
        P[:, k + 1] = ((2 * k + 1) * t * P[:, k] - k * P[:, k - 1]) / (k + 1)
        dP[:, k + 1] = dP[:, k - 1] + (2 * k + 1) * P[:, k]
        d2P[:, k + 1] = d2P[:, k - 1] + (2 * k + 1) * dP[:, k]
    return P, dP, d2P


def legendre(k: int, t: float):
    """L_k(t) and L_k'(t)."""
    if not -1.0 <= t <= 1.0:
        raise ValueError("legendre requires t in [-1, 1]")
    P, dP, _ = legendre_table(k, t)
    return float(P[0, k]), float(dP[0, k])


@dataclass(frozen=True)
class RadialBasisIndex:
    i: int
    delta: float

    def __post_init__(self):
        if self.i < 1:
            raise ValueError("radial basis index starts at 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


def radial_basis_table(n: int, delta: float, r):
    """rho_i(r) = (1-r) L_i'(2(r-delta)/(1-delta) - 1) for i = 1..n.

    Returns values and r-derivatives, each of shape (len(r), n).
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < delta - 1e-14) or np.any(r > 1.0 + 1e-14):
        raise ValueError("radial basis evaluated outside [delta, 1]")
    t = np.clip(2.0 * (r - delta) / (1.0 - delta) - 1.0, -1.0, 1.0)
    _, dP, d2P = legendre_table(n, t)
    dP, d2P = dP[:, 1:], d2P[:, 1:]
    one_minus = (1.0 - r)[:, None]
    val = one_minus * dP
    der = -dP + one_minus * d2P * (2.0 / (1.0 - delta))
    return val, der


def radial_basis(idx: RadialBasisIndex, r: float):
    val, der = radial_basis_table(idx.i, idx.delta, r)
    return float(val[0, idx.i - 1]), float(der[0, idx.i - 1])
