"""Molecular cavity: enlarged balls, SAS level function, epsilon and lambda fields.

All lengths are in atomic units (bohr). The solvent-accessible level
function is the min-over-balls approximation

    f(x) = min_i (|x - x_i| - (r_i + r_p + a)),

negative inside the cavity. Both the dielectric transition and the ion
exclusion transition are smoothed over a layer of width r_p with the
quintic switching polynomial ``switching_xi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MEMBERSHIP_TOL = 1e-9
BOHR_PER_ANGSTROM = 1.8897261246


@dataclass(frozen=True)
class Atom:
    center: tuple
    charge: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"atom radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class CavityParams:
    r_p: float = 1.4 * BOHR_PER_ANGSTROM
    a: float = 0.0
    r_0: float = 0.0
    eps_s: float = 78.54
    kappa: float = 0.104 / BOHR_PER_ANGSTROM
    beta: float = 1.0

    def __post_init__(self):
        if not self.r_p > 0:
            raise ValueError("r_p must be positive")
        if self.a < 0 or self.r_0 < 0:
            raise ValueError("a and r_0 must be nonnegative")
        if self.eps_s < 1:
            raise ValueError("eps_s must be >= 1")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass(frozen=True, eq=False)
class CavityModel:
    atoms: tuple
    params: CavityParams
    centers: np.ndarray = field(repr=False)
    charges: np.ndarray = field(repr=False)
    vdw: np.ndarray = field(repr=False)
    radii: np.ndarray = field(repr=False)  # enlarged radii R_i
    deltas: np.ndarray = field(repr=False)  # r_i / R_i
    neighbors: tuple = field(repr=False)

    @property
    def n_spheres(self) -> int:
        return len(self.atoms)


def build_cavity(atoms: Sequence[Atom], params: CavityParams) -> CavityModel:
    atoms = tuple(atoms)
    if not atoms:
        raise ValueError("cavity needs at least one atom")
    centers = np.array([a.center for a in atoms], dtype=float)
    charges = np.array([a.charge for a in atoms], dtype=float)
    vdw = np.array([a.radius for a in atoms], dtype=float)
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    if np.any(d < 1e-12):
        i, j = np.argwhere(d < 1e-12)[0]
        raise ValueError(f"atoms {i} and {j} have coincident centers")
    R = vdw + params.r_p + params.a + params.r_0
    nb = tuple(tuple(int(k) for k in np.flatnonzero(d[i] < R[i] + R)) for i in range(len(atoms)))
    for arr in (centers, charges, vdw, R):
        arr.setflags(write=False)
    deltas = vdw / R
    deltas.setflags(write=False)
    return CavityModel(atoms, params, centers, charges, vdw, R, deltas, nb)


def f_sas(model: CavityModel, x) -> np.ndarray | float:
    """SAS signed level function at point(s) ``x`` (shape (3,) or (n, 3))."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    p = model.params
    d = np.linalg.norm(pts[:, None, :] - model.centers[None, :, :], axis=-1)
    f = np.min(d - (model.vdw + p.r_p + p.a)[None, :], axis=1)
    return float(f[0]) if x.ndim == 1 else f


def switching_xi(t):
    """Quintic smoothstep t^3 (10 + 3t(-5 + 2t)); defined on [0, 1] only."""
    ta = np.asarray(t, dtype=float)
    if np.any(ta < 0.0) or np.any(ta > 1.0):
        raise ValueError("switching_xi argument outside [0, 1]")
    # evaluate the upper half through xi(t) = 1 - xi(1 - t) so the range stays in [0, 1]
    u = np.minimum(ta, 1.0 - ta)
    v = u ** 3 * (10.0 + 3.0 * u * (-5.0 + 2.0 * u))
    v = np.where(ta > 0.5, 1.0 - v, v)
    return float(v) if np.ndim(t) == 0 else v


def switching_xi_deriv(t):
    ta = np.asarray(t, dtype=float)
    return 30.0 * ta ** 2 * (1.0 - ta) ** 2


def _layer(f, lo, width):
    """0 below lo, 1 above lo + width, switching_xi in between."""
    f = np.asarray(f, dtype=float)
    out = np.where(f >= lo + width, 1.0, 0.0)
    mid = (f > lo) & (f < lo + width)
    if np.any(mid):
        out[mid] = switching_xi((f[mid] - lo) / width)
    return out


def permittivity_from_f(params: CavityParams, f):
    p = params
    return 1.0 + (p.eps_s - 1.0) * _layer(f, -p.r_p - p.a, p.r_p)


def ion_exclusion_from_f(params: CavityParams, f):
    return _layer(f, -params.r_p, params.r_p)


def permittivity(model: CavityModel, x):
    """Relative permittivity: 1 deep inside, eps_s outside, smooth in between."""
    x = np.asarray(x, dtype=float)
    v = permittivity_from_f(model.params, np.atleast_1d(f_sas(model, np.atleast_2d(x))))
    return float(v[0]) if x.ndim == 1 else v


def ion_exclusion(model: CavityModel, x):
    """Ion accessibility: 0 inside the cavity up to the Stern layer, 1 in bulk."""
    x = np.asarray(x, dtype=float)
    v = ion_exclusion_from_f(model.params, np.atleast_1d(f_sas(model, np.atleast_2d(x))))
    return float(v[0]) if x.ndim == 1 else v


def membership(model: CavityModel, x) -> np.ndarray:
    """Boolean (n, M) table: point inside the open enlarged ball of each sphere."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.linalg.norm(pts[:, None, :] - model.centers[None, :, :], axis=-1)
    return d < model.radii[None, :] - MEMBERSHIP_TOL


def partition_table(model: CavityModel, j: int, x):
    """Partition weights for points ``x`` (n, 3) on the sphere Gamma_j.

    Returns (omega, chi_e) where omega has shape (n, M) with omega[:, j] = 0
    and chi_e has shape (n,). Rows satisfy sum(omega) + chi_e = 1.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    inside = membership(model, pts)
    inside[:, j] = False
    count = inside.sum(axis=1)
    omega = np.zeros(inside.shape)
    hit = count > 0
    omega[hit] = inside[hit] / count[hit, None]
    chi_e = np.where(hit, 0.0, 1.0)
    return omega, chi_e


def partition_weights(model: CavityModel, j: int, x):
    """Weights omega_jk for each neighbor k of sphere j and chi_j^e at one point."""
    x = np.asarray(x, dtype=float)
    dist = np.linalg.norm(x - model.centers[j])
    if abs(dist - model.radii[j]) > 1e-9 * max(1.0, model.radii[j]):
        raise ValueError(f"point is not on sphere {j}")
    omega, chi = partition_table(model, j, x[None, :])
    return {k: float(omega[0, k]) for k in model.neighbors[j]}, float(chi[0])
