"""Domain-decomposition solver for the nonlinear Poisson-Boltzmann equation.

The solute cavity is covered by enlarged atomic balls; each ball carries a
spectral Galerkin solver (spherical harmonics times Legendre-based radial
functions), the balls are coupled by Schwarz iterations, and the bulk
solvent is represented by a screened single-layer potential.
"""

from .ball_solvers import Discretization, LocalProblem, gsp_solve
from .cavity import Atom, CavityParams, build_cavity
from .energy import EnergyBreakdown, one_atom_test_energy, solvation_energy
from .global_system import SolverOptions, outer_solve
from .io import RunConfig, convert_units, parse_config, parse_pqr

__all__ = [
    "Atom", "CavityParams", "build_cavity", "Discretization", "LocalProblem", "gsp_solve",
    "EnergyBreakdown", "one_atom_test_energy", "solvation_energy", "SolverOptions",
    "outer_solve", "RunConfig", "convert_units", "parse_config", "parse_pqr",
]
