"""Vacuum potential, solvation-energy functionals and NPB/LPB diagnostics.

Energies are in Hartree with 4 pi eps_0 = 1. The nonlinear solvation
energy is

    E_s = beta/2 sum_i q_i psi_r(x_i)
          + beta^2 kappa^2 eps_s / (8 pi) int lam [psi_r sinh psi_r - 2 (cosh psi_r - 1)],

where the integral term is reported as a stress part (psi sinh psi) and an
osmotic part (-2 (cosh psi - 1)). Under the linearized model both vanish.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cavity import CavityModel
from .specfun import real_sph_harm


@dataclass(frozen=True)
class EnergyBreakdown:
    coulomb_term: float
    stress_term: float
    osmotic_term: float
    total: float

    @classmethod
    def from_parts(cls, coulomb, stress=0.0, osmotic=0.0):
        return cls(float(coulomb), float(stress), float(osmotic),
                   float(coulomb) + float(stress) + float(osmotic))

    def as_dict(self):
        return {"coulomb_term": self.coulomb_term, "stress_term": self.stress_term,
                "osmotic_term": self.osmotic_term, "total": self.total}


def _charges(molecule):
    if isinstance(molecule, CavityModel):
        return molecule.centers, molecule.charges, molecule.params.beta
    centers = np.array([a.center for a in molecule], dtype=float)
    return centers, np.array([a.charge for a in molecule], dtype=float), 1.0


def psi0(molecule, x, beta: float | None = None):
    """Coulomb potential sum_i q_i / (beta |x - x_i|) at point(s) ``x``."""
    centers, q, b = _charges(molecule)
    b = b if beta is None else beta
    xa = np.asarray(x, dtype=float)
    pts = np.atleast_2d(xa)
    d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    if np.any(d == 0.0):
        raise ValueError("vacuum potential is singular at an atom center")
    v = (q[None, :] / d).sum(axis=1) / b
    return float(v[0]) if xa.ndim == 1 else v


def grad_psi0(molecule, x, beta: float | None = None):
    """Gradient of ``psi0`` at point(s) ``x``."""
    centers, q, b = _charges(molecule)
    b = b if beta is None else beta
    xa = np.asarray(x, dtype=float)
    pts = np.atleast_2d(xa)
    diff = pts[:, None, :] - centers[None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d == 0.0):
        raise ValueError("vacuum potential is singular at an atom center")
    g = -(q[None, :, None] * diff / d[:, :, None] ** 3).sum(axis=1) / b
    return g[0] if xa.ndim == 1 else g


def screened_coulomb(molecule, x, eps_s: float, kappa: float, beta: float = 1.0):
    """sum_i q_i exp(-kappa d_i) / (beta eps_s d_i): the bulk-solvent potential."""
    centers, q, _ = _charges(molecule)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=-1)
    return (q[None, :] * np.exp(-kappa * d) / d).sum(axis=1) / (beta * eps_s)


def stress_density(psi):
    """Stress integrand psi sinh(psi)."""
    psi = np.asarray(psi, dtype=float)
    return psi * np.sinh(psi)


def osmotic_density(psi):
    """-2 (cosh(psi) - 1) = -4 sinh(psi/2)^2, free of cancellation."""
    psi = np.asarray(psi, dtype=float)
    return -4.0 * np.sinh(0.5 * psi) ** 2


def increment(E_k: float, E_km1: float) -> float:
    """Relative increment |E_k - E_km1| / |E_k|."""
    if E_k == 0.0:
        raise ValueError("relative increment undefined for E_k = 0")
    return abs(E_k - E_km1) / abs(E_k)


def solvation_energy(state, cavity: CavityModel, disc=None, model: str = "npb") -> EnergyBreakdown:
    """Energy breakdown of a global state produced by ``global_system``.

    ``state`` must expose ``center_values()`` (psi_r at every atom center)
    and ``volume_samples()`` yielding (psi_r, lam, weight) arrays over the
    ion-accessible quadrature nodes with overlap-corrected weights.
    """
    p = cavity.params
    centers = np.asarray(state.center_values(), dtype=float)
    if not np.all(np.isfinite(centers)):
        raise ValueError("non-finite reaction potential in state")
    coulomb = 0.5 * p.beta * float(np.dot(cavity.charges, centers))
    if model == "lpb" or p.kappa == 0.0:
        return EnergyBreakdown.from_parts(coulomb)
    pref = p.beta ** 2 * p.kappa ** 2 * p.eps_s / (8.0 * np.pi)
    stress = osmotic = 0.0
    for psi, lam, w in state.volume_samples():
        if not np.all(np.isfinite(psi)):
            raise ValueError("non-finite reaction potential in state")
        stress += float(np.sum(w * lam * stress_density(psi)))
        osmotic += float(np.sum(w * lam * osmotic_density(psi)))
    return EnergyBreakdown.from_parts(coulomb, pref * stress, pref * osmotic)


def one_atom_test_energy(state, disc, radius: float = 0.0) -> float:
    """sum_n q w_n psi_r(rho s_n) Y_00(s_n) for a single-atom state.

    ``radius`` is the sampling radius in unit-ball coordinates (0 samples
    the center through the inner harmonic extension, 1 samples the
    sphere). With radius 0 this equals 2 sqrt(pi) q psi_r(center).
    """
    if state.n_spheres != 1:
        raise ValueError("test energy is defined for one-atom systems only")
    leb = disc.leb
    y = radius * leb.points
    psi = state.eval_unit(0, y)
    Y00 = real_sph_harm(0, leb.points)[:, 0]
    q = float(state.cavity.charges[0])
    return float(q * np.sum(leb.weights * psi * Y00))


def compare_npb_lpb(molecule, params, disc, radii, options=None):
    """Sample |psi_NPB - psi_LPB| along a ray from a single atom.

    ``radii`` are physical distances from the atom center in [r_1, R_1].
    Returns rows (r, psi_npb, psi_lpb, var).
    """
    from dataclasses import replace

    from .cavity import build_cavity
    from .global_system import SolverOptions, outer_solve

    cav = build_cavity(molecule, params)
    if cav.n_spheres != 1:
        raise ValueError("NPB/LPB comparison needs a one-atom molecule")
    radii = np.asarray(radii, dtype=float)
    lo, hi = cav.vdw[0], cav.radii[0]
    if np.any(radii < lo - 1e-12) or np.any(radii > hi + 1e-12):
        raise ValueError(f"radii must lie in [{lo}, {hi}]")
    opts = options or SolverOptions()
    pts = cav.centers[0] + radii[:, None] * np.array([0.0, 0.0, 1.0])
    vals = {}
    for model in ("npb", "lpb"):
        state, _ = outer_solve(cav, disc, replace(opts, model=model))
        vals[model] = state.eval_physical(0, pts)
    var = np.abs(vals["npb"] - vals["lpb"])
    return [(float(r), float(a), float(b), float(v))
            for r, a, b, v in zip(radii, vals["npb"], vals["lpb"], var)]
