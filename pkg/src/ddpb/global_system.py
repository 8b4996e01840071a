"""Coupling of the per-ball problems and the outer iteration.

Unknowns per sphere j:

* ``lifts[j]``  harmonic lift coefficients U_j of the Dirichlet data of psi_r
  on Gamma_j (length nY);
* ``coeffs[j]`` Galerkin coefficients X_j of the correction, shape (nY, N);
* ``xe[j]``     boundary coefficients of the extended potential psi_e.

The concatenation [U_j, X_j.ravel()] over spheres is the reaction-potential
vector X_r; the concatenation of ``xe`` is X_e.

One outer iteration, given the global coupling value g on the exposed
part of the cavity boundary:

1. Jacobi-Schwarz sweeps: on Gamma_j the Dirichlet data of psi_r is
   chi_e (g - psi0) + sum_k omega_jk psi_r|_{Omega_k}; each ball is then
   solved by the damped fixed point of ``ball_solvers``;
2. the linear system B X_e = P[chi_e g] for the extended potential;
3. the single-layer density sigma = d_n psi_e - d_n (psi_r + psi0) on the
   exposed nodes and the new g = S[sigma];
4. the solvation energy and the relative increment.

g is stored as samples at the exposed Lebedev images of every sphere.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import gmres

from . import specfun
from .ball_solvers import (Discretization, LocalProblem, LocalSolver, _directions,
                           annulus_points, eval_local, mass_matrix)
from .cavity import CavityModel, membership, partition_table, permittivity_from_f
from .cavity import f_sas, ion_exclusion_from_f
from .energy import (EnergyBreakdown, grad_psi0, increment, psi0, screened_coulomb,
                     solvation_energy)
from .errors import DivergenceError, NonConvergenceError, SolverError

DIRECT_LIMIT = 20000


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-6
    max_outer: int = 50
    max_dd: int = 50
    max_fp: int = 100
    damping: float = 0.5
    model: str = "npb"
    frozen_factor: bool = False
    run_all: bool = False
    hsp_method: str = "auto"
    oscillation_window: int = 5

    def __post_init__(self):
        if self.model not in ("npb", "lpb"):
            raise ValueError("model must be npb|lpb")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.hsp_method not in ("auto", "direct", "iterative"):
            raise ValueError("hsp_method must be auto|direct|iterative")
        if min(self.max_outer, self.max_dd, self.max_fp) < 1:
            raise ValueError("iteration limits must be >= 1")

    @property
    def dd_tol(self) -> float:
        return 10.0 * self.tol

    @property
    def fp_tol(self) -> float:
        return 100.0 * self.tol


@dataclass
class IterationRecord:
    k: int
    energy: float
    inc: float
    dd_loops: int
    fp_loops: int
    fp_total: int
    bc_residual: float


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    wall_time: float = 0.0
    converged_at: int | None = None

    def as_dict(self):
        return {"status": self.status, "message": self.message,
                "converged_at": self.converged_at,
                "records": [asdict(r) for r in self.records], "wall_time": self.wall_time}

    @property
    def energies(self):
        return [r.energy for r in self.records]


# ---------------------------------------------------------------------------
# geometry per sphere


class TraceMap:
    """Evaluates the fields of ball k at the Lebedev images of Gamma_j it covers."""

    def __init__(self, cav: CavityModel, disc: Discretization, j: int, k: int, idx, pts, omega):
        self.k = k
        self.idx = idx
        self.omega = omega
        L, N = disc.lmax, disc.n_radial
        delta = cav.deltas[k]
        y = (pts - cav.centers[k]) / cav.radii[k]
        r = np.linalg.norm(y, axis=1)
        s = _directions(y, r)
        self.solid = specfun.solid_harmonics(L, y)
        self.outer = r >= delta
        ro = np.minimum(r[self.outer], 1.0)
        self.Y_out = specfun.solid_harmonics(L, s[self.outer])
        self.rho_out, _ = specfun.radial_basis_table(N, delta, ro)
        self.inner = ~self.outer
        self.solid_in = specfun.solid_harmonics(L, y[self.inner] / delta)
        ends, _ = specfun.radial_basis_table(N, delta, [delta])
        self.rho_delta = ends[0]
        kap = cav.params.kappa * cav.radii[k]
        ratio = specfun.i_ratio(L, kap, r, 1.0)[:, disc.l]
        self.hsp = specfun.solid_harmonics(L, s) * ratio

    def eval_r(self, U, X) -> np.ndarray:
        v = self.solid @ U
        if self.Y_out.size:
            v[self.outer] += np.sum((self.Y_out @ X) * self.rho_out, axis=1)
        if self.solid_in.size:
            v[self.inner] += self.solid_in @ (X @ self.rho_delta)
        return v

    def eval_r_matrix(self, nY, N) -> np.ndarray:
        """Dense map [U, X.ravel()] -> values, for inspection and tests."""
        n = self.idx.size
        E = np.zeros((n, nY + nY * N))
        E[:, :nY] = self.solid
        o = np.flatnonzero(self.outer)
        E[o, nY:] = (self.Y_out[:, :, None] * self.rho_out[:, None, :]).reshape(o.size, nY * N)
        i = np.flatnonzero(self.inner)
        E[i, nY:] = (self.solid_in[:, :, None] * self.rho_delta[None, None, :]).reshape(
            i.size, nY * N)
        return E


class Sphere:
    def __init__(self, cav: CavityModel, disc: Discretization, j: int, model: str):
        p = cav.params
        self.j = j
        self.center = cav.centers[j]
        self.R = float(cav.radii[j])
        self.delta = float(cav.deltas[j])
        s = disc.leb.points
        self.nodes = self.center + self.R * s
        omega, chi = partition_table(cav, j, self.nodes)
        self.chi_e = chi
        self.ext = np.flatnonzero(chi > 0)
        self.traces = []
        for k in cav.neighbors[j]:
            idx = np.flatnonzero(omega[:, k] > 0)
            if idx.size:
                self.traces.append(TraceMap(cav, disc, j, k, idx, self.nodes[idx], omega[idx, k]))
        # psi0 is consumed on the exposed nodes only
        self.psi0_gamma = np.zeros(disc.n_leb)
        self.dpsi0_gamma = np.zeros(disc.n_leb)
        if self.ext.size:
            xe = self.nodes[self.ext]
            self.psi0_gamma[self.ext] = psi0(cav, xe)
            self.dpsi0_gamma[self.ext] = np.einsum("nc,nc->n", grad_psi0(cav, xe), s[self.ext])
        self.ilog = np.array([specfun.i_radial_logderiv(l, p.kappa, self.R)
                              for l in range(disc.lmax + 1)])[disc.l]
        self.slayer = np.array([specfun.single_layer_factor(l, p.kappa, self.R)
                                for l in range(disc.lmax + 1)])[disc.l]
        # local problem sampled at the annulus nodes
        y = annulus_points(self.delta, disc)
        x = self.center + self.R * y.reshape(-1, 3)
        shape = y.shape[:2]
        f = f_sas(cav, x)
        eps = permittivity_from_f(p, f).reshape(shape)
        lam = ion_exclusion_from_f(p, f).reshape(shape)
        # psi0 only enters through (eps - 1) and lam, both zero inside every vdW ball,
        # so nodes that happen to sit on an atom center are never evaluated
        used = ((eps != 1.0) | (lam != 0.0)).ravel()
        ps0 = np.zeros(x.shape[0])
        gps0 = np.zeros(x.shape)
        if np.any(used):
            ps0[used] = psi0(cav, x[used])
            gps0[used] = self.R * grad_psi0(cav, x[used])
        ps0 = ps0.reshape(shape)
        gps0 = gps0.reshape(shape + (3,))
        screening = self.R ** 2 * p.kappa ** 2 * p.eps_s
        self.problem = LocalProblem(self.delta, disc, eps, lam, ps0, gps0, screening,
                                    np.zeros(disc.nY), nonlinear=(model == "npb"))
        self.solver = LocalSolver(self.problem)
        # overlap multiplicity of the ion-accessible nodes, for volume integrals
        sh = self.solver.ion_shells
        self.ion_shells = sh
        if sh.size:
            mult = membership(cav, x).reshape(shape + (cav.n_spheres,))[sh]
            mult[..., j] = True
            rt = self.problem.radial
            w = self.R ** 3 * rt.wr[sh, None] * disc.leb.weights[None, :]
            self.vol_weight = w / mult.sum(axis=-1)
        else:
            self.vol_weight = np.zeros((0, disc.n_leb))


# ---------------------------------------------------------------------------
# state


@dataclass(eq=False)
class GlobalUnknowns:
    """Solution state; ``X_r`` and ``X_e`` are the flat coefficient vectors."""

    system: "CoupledSystem"
    lifts: np.ndarray  # (M, nY)
    coeffs: np.ndarray  # (M, nY, N)
    xe: np.ndarray  # (M, nY)
    g: list  # exposed-node samples per sphere

    @property
    def cavity(self):
        return self.system.cavity

    @property
    def n_spheres(self) -> int:
        return self.lifts.shape[0]

    @property
    def X_r(self) -> np.ndarray:
        M = self.n_spheres
        return np.concatenate([self.lifts, self.coeffs.reshape(M, -1)], axis=1).ravel()

    @property
    def X_e(self) -> np.ndarray:
        return self.xe.ravel()

    def eval_unit(self, j: int, y) -> np.ndarray:
        return eval_local(self.coeffs[j], self.lifts[j], self.system.spheres[j].delta, y)

    def eval_physical(self, j: int, x) -> np.ndarray:
        sp = self.system.spheres[j]
        return self.eval_unit(j, (np.atleast_2d(x) - sp.center) / sp.R)

    def center_values(self) -> np.ndarray:
        Y00 = 0.5 / np.sqrt(np.pi)
        out = np.empty(self.n_spheres)
        for j, sp in enumerate(self.system.spheres):
            gamma00 = self.coeffs[j][0] @ sp.problem.radial.rho_delta
            out[j] = (self.lifts[j][0] + gamma00) * Y00
        return out

    def volume_samples(self):
        for j, sp in enumerate(self.system.spheres):
            if sp.ion_shells.size == 0:
                continue
            sp.problem.lift = self.lifts[j]
            psi = sp.solver.psi_r_nodes(self.coeffs[j], sp.ion_shells)
            yield psi, sp.problem.lam[sp.ion_shells], sp.vol_weight


# ---------------------------------------------------------------------------
# coupled system


class CoupledSystem:
    """Precomputed geometry, local solvers and coupling operators."""

    def __init__(self, cavity: CavityModel, disc: Discretization, model: str = "npb"):
        self.cavity = cavity
        self.disc = disc
        self.model = model
        self.spheres = [Sphere(cavity, disc, j, model) for j in range(cavity.n_spheres)]
        self.coupled = any(sp.traces for sp in self.spheres)
        # exposed nodes of all spheres and the single-layer evaluation maps
        ext_pts = [sp.nodes[sp.ext] for sp in self.spheres]
        self.ext_slices = []
        start = 0
        for pts in ext_pts:
            self.ext_slices.append(slice(start, start + len(pts)))
            start += len(pts)
        self.ext_points = np.concatenate(ext_pts) if start else np.zeros((0, 3))
        self.Q = [self._single_layer_map(sp) for sp in self.spheres]
        self.B = assemble_B_from(self)
        nB = self.B.shape[0]
        self.hsp_direct = nB <= DIRECT_LIMIT
        self.B_lu = sla.lu_factor(self.B) if self.hsp_direct else None

    def _single_layer_map(self, sp: Sphere) -> np.ndarray:
        """Values at all exposed nodes of k_l(kappa d)/k_l(kappa R) Y_p(dir)."""
        disc, p = self.disc, self.cavity.params
        if self.ext_points.shape[0] == 0:
            return np.zeros((0, disc.nY))
        diff = self.ext_points - sp.center
        d = np.linalg.norm(diff, axis=1)
        d = np.maximum(d, sp.R * (1.0 - 1e-12))
        Y = specfun.real_sph_harm(disc.lmax, diff / np.linalg.norm(diff, axis=1)[:, None])
        kr = specfun.k_ratio(disc.lmax, p.kappa, d, sp.R)[:, disc.l]
        return Y * kr

    # -- pieces of one outer iteration ------------------------------------
    def initial_g(self) -> list:
        p = self.cavity.params
        return [screened_coulomb(self.cavity, sp.nodes[sp.ext], p.eps_s, p.kappa, p.beta)
                for sp in self.spheres]

    def boundary_data(self, j, lifts, coeffs, g) -> np.ndarray:
        sp = self.spheres[j]
        h = np.zeros(self.disc.n_leb)
        h[sp.ext] = g[j] - sp.psi0_gamma[sp.ext]
        for tm in sp.traces:
            h[tm.idx] += tm.omega * tm.eval_r(lifts[tm.k], coeffs[tm.k])
        return h

    def hsp_rhs(self, g) -> np.ndarray:
        Yw = self.disc.Yw
        return np.concatenate([g[j] @ Yw[sp.ext] for j, sp in enumerate(self.spheres)])

    def solve_hsp(self, g, x0=None, method: str = "auto") -> np.ndarray:
        """Solve B X_e = P[chi_e g]; ``method`` is auto, direct or iterative."""
        rhs = self.hsp_rhs(g)
        if method == "auto":
            method = "direct" if self.hsp_direct else "iterative"
        if method == "direct":
            if self.B_lu is None:
                self.B_lu = sla.lu_factor(self.B)
            x = sla.lu_solve(self.B_lu, rhs)
        else:
            x = linear_solve(self.B, rhs, "iterative", x0=x0)
        return x.reshape(len(self.spheres), -1)

    def sigma(self, j, lift, coeffs, xe) -> np.ndarray:
        """Single-layer density at the exposed nodes of Gamma_j."""
        sp = self.spheres[j]
        Y = self.disc.Y[sp.ext]
        d_e = Y @ (sp.ilog * xe)
        dcoef = self.disc.l * lift + coeffs @ sp.problem.radial.drho_one
        d_r = Y @ dcoef / sp.R
        return d_e - d_r - sp.dpsi0_gamma[sp.ext]

    def new_g(self, lifts, coeffs, xe) -> list:
        if self.ext_points.shape[0] == 0:
            return [np.zeros(0) for _ in self.spheres]
        g = np.zeros(self.ext_points.shape[0])
        Yw = self.disc.Yw
        for j, sp in enumerate(self.spheres):
            if sp.ext.size == 0:
                continue
            dens = self.sigma(j, lifts[j], coeffs[j], xe[j]) @ Yw[sp.ext]
            g += self.Q[j] @ (sp.slayer * dens)
        return [g[s] for s in self.ext_slices]


def assemble_B_from(system: CoupledSystem) -> np.ndarray:
    nY = system.disc.nY
    M = len(system.spheres)
    B = np.eye(M * nY)
    Yw = system.disc.Yw
    for j, sp in enumerate(system.spheres):
        for tm in sp.traces:
            block = (Yw[tm.idx] * tm.omega[:, None]).T @ tm.hsp
            B[j * nY:(j + 1) * nY, tm.k * nY:(tm.k + 1) * nY] -= block
    return B


def assemble_B(cavity: CavityModel, disc: Discretization) -> np.ndarray:
    """Matrix of the extended-potential system B X_e = P[chi_e g]."""
    return CoupledSystem(cavity, disc, "lpb").B


def assemble_A_blocks(cavity: CavityModel, disc: Discretization, X_r_prev=None,
                      model: str = "npb"):
    """Per-sphere blocks of the reaction-potential operator.

    For sphere j returns a dict with the local Galerkin matrix ``local``
    (nonlinear factor frozen at ``X_r_prev``), its load ``load`` for zero
    boundary data, and ``neighbors``: {k: matrix} mapping [U_k, X_k] to the
    contribution of ball k to the lift coefficients U_j.
    """
    system = CoupledSystem(cavity, disc, model)
    nY, N = disc.nY, disc.n_radial
    M = cavity.n_spheres
    if X_r_prev is None:
        X_r_prev = np.zeros(M * (nY + nY * N))
    blocks_in = np.asarray(X_r_prev, dtype=float).reshape(M, nY + nY * N)
    out = []
    for j, sp in enumerate(system.spheres):
        sp.problem.lift = blocks_in[j, :nY]
        Xj = blocks_in[j, nY:].reshape(nY, N)
        F = sp.solver.factor_nodes(Xj)
        A = sp.solver.K + sp.problem.screening * mass_matrix(disc, sp.problem.radial,
                                                             sp.problem.lam * F)
        nb = {}
        for tm in sp.traces:
            nb[tm.k] = (disc.Yw[tm.idx] * tm.omega[:, None]).T @ tm.eval_r_matrix(nY, N)
        out.append({"local": 0.5 * (A + A.T), "load": sp.solver.load(F).ravel(),
                    "neighbors": nb})
    return out


@dataclass(eq=False)
class CouplingOperators:
    """Linear maps between the unknowns and the coupling value g.

    With X_r = [U_j, X_j] per sphere, the projected HSP right-hand side is
    G_X = F0 - C1 X_r - C2 X_e. ``P`` holds the per-sphere Gram matrices of
    chi_e, ``Q`` the single-layer evaluation maps and ``C`` the mode factors.
    """

    B: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    F0: np.ndarray
    G0: np.ndarray
    P: list
    Q: list
    C: np.ndarray


def assemble_coupling(cavity: CavityModel, disc: Discretization) -> CouplingOperators:
    system = CoupledSystem(cavity, disc, "lpb")
    nY, N = disc.nY, disc.n_radial
    M = cavity.n_spheres
    nr = nY + nY * N
    Yw = disc.Yw
    n_ext = system.ext_points.shape[0]
    # sigma -> g at exposed nodes, one column block per sphere unknown
    S_r = np.zeros((n_ext, M * nr))
    S_e = np.zeros((n_ext, M * nY))
    f_g = np.zeros(n_ext)
    for k, sp in enumerate(system.spheres):
        if sp.ext.size == 0:
            continue
        Y = disc.Y[sp.ext]
        proj = Yw[sp.ext].T * sp.slayer[:, None]  # sigma nodes -> weighted coefficients
        T = system.Q[k] @ proj  # sigma nodes -> g
        S_e[:, k * nY:(k + 1) * nY] = T @ (Y * sp.ilog[None, :])
        Dr = np.zeros((sp.ext.size, nr))
        Dr[:, :nY] = Y * disc.l[None, :] / sp.R
        Dr[:, nY:] = (Y[:, :, None] * sp.problem.radial.drho_one[None, None, :]).reshape(
            sp.ext.size, -1) / sp.R
        S_r[:, k * nr:(k + 1) * nr] = T @ Dr
        f_g -= T @ sp.dpsi0_gamma[sp.ext]
    R = np.zeros((M * nY, n_ext))
    G0 = np.zeros(M * nY)
    P = []
    for j, sp in enumerate(system.spheres):
        R[j * nY:(j + 1) * nY, system.ext_slices[j]] = Yw[sp.ext].T
        G0[j * nY:(j + 1) * nY] = -(sp.psi0_gamma[sp.ext] @ Yw[sp.ext])
        P.append((Yw * sp.chi_e[:, None]).T @ disc.Y)
    C = np.array([[specfun.single_layer_factor(l, cavity.params.kappa, sp.R)
                   for l in range(disc.lmax + 1)] for sp in system.spheres])
    return CouplingOperators(system.B, R @ S_r, -(R @ S_e), R @ f_g, G0, P, system.Q, C)


# ---------------------------------------------------------------------------
# linear solves


def linear_solve(A, b, method: str = "direct", tol: float = 1e-10, x0=None,
                 restart: int = 50, max_restarts: int = 50) -> np.ndarray:
    """Solve A x = b directly (LU) or by restarted GMRES."""
    b = np.asarray(b, dtype=float)
    if method == "direct":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.size:
            raise ValueError("direct solve needs a square matrix matching rhs")
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                lu, piv = sla.lu_factor(A, check_finite=True)
            except sla.LinAlgWarning as exc:
                raise np.linalg.LinAlgError(f"singular matrix: {exc}") from None
        if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * np.abs(lu).max() * b.size):
            raise np.linalg.LinAlgError("singular matrix")
        x = sla.lu_solve((lu, piv), b)
        res = np.linalg.norm(A @ x - b)
        if res > 1e-10 * max(np.linalg.norm(b), 1e-300) and np.linalg.norm(b) > 0:
            raise np.linalg.LinAlgError(f"direct solve residual {res:.3e} too large")
        return x
    if method != "iterative":
        raise ValueError("method must be direct|iterative")
    history = []
    x, info = gmres(A, b, x0=x0, rtol=tol, atol=0.0, restart=restart, maxiter=max_restarts,
                    callback=lambda r: history.append(float(r)), callback_type="pr_norm")
    if info != 0:
        raise NonConvergenceError("GMRES stagnated", trace=history,
                                  residual=history[-1] if history else None)
    return x


# ---------------------------------------------------------------------------
# outer iteration


def _dd_loop(system: CoupledSystem, lifts, coeffs, g, opts: SolverOptions):
    """Jacobi-Schwarz sweeps for psi_r with fixed g; updates arrays in place."""
    disc = system.disc
    fp_counts = []
    damping = opts.damping
    for it in range(1, opts.max_dd + 1):
        new_lifts = np.array([system.boundary_data(j, lifts, coeffs, g) @ disc.Yw
                              for j in range(len(system.spheres))])
        new_coeffs = np.empty_like(coeffs)
        for j, sp in enumerate(system.spheres):
            sp.problem.lift = new_lifts[j]
            X, nu, _ = sp.solver.fixed_point(coeffs[j], damping, opts.fp_tol, opts.max_fp,
                                             raise_on_fail=False)
            new_coeffs[j] = X
            fp_counts.append(nu)
        diff = np.sqrt(np.sum((new_lifts - lifts) ** 2) + np.sum((new_coeffs - coeffs) ** 2))
        nrm = np.sqrt(np.sum(new_lifts ** 2) + np.sum(new_coeffs ** 2))
        lifts[...] = new_lifts
        coeffs[...] = new_coeffs
        if not (np.all(np.isfinite(lifts)) and np.all(np.isfinite(coeffs))):
            raise DivergenceError("non-finite reaction potential", kind="diverged")
        if not system.coupled:
            break
        if diff == 0.0 or diff <= opts.dd_tol * nrm:
            break
    return it, fp_counts


def _bc_residual(system: CoupledSystem, lifts, g) -> float:
    """Largest deviation of psi_r + psi0 from g on the exposed nodes."""
    worst = 0.0
    for j, sp in enumerate(system.spheres):
        if sp.ext.size == 0:
            continue
        vals = system.disc.Y[sp.ext] @ lifts[j] + sp.psi0_gamma[sp.ext]
        worst = max(worst, float(np.max(np.abs(vals - g[j]))))
    return worst


def _frozen(system: CoupledSystem):
    for sp in system.spheres:
        sp.problem.nonlinear = False


def run_outer(system: CoupledSystem, opts: SolverOptions, state: GlobalUnknowns | None = None):
    """Run the outer iteration; returns (state, trace) without raising on failure."""
    t0 = time.perf_counter()
    disc = system.disc
    M = len(system.spheres)
    if opts.frozen_factor or opts.model == "lpb":
        _frozen(system)
    if state is None:
        state = GlobalUnknowns(system, np.zeros((M, disc.nY)),
                               np.zeros((M, disc.nY, disc.n_radial)),
                               np.zeros((M, disc.nY)), system.initial_g())
    trace = SolveTrace()
    E_prev = 0.0
    rising = 0
    inc_prev = np.inf
    try:
        for k in range(1, opts.max_outer + 1):
            dd, fps = _dd_loop(system, state.lifts, state.coeffs, state.g, opts)
            bc = _bc_residual(system, state.lifts, state.g)
            state.xe = system.solve_hsp(state.g, state.xe.ravel(), opts.hsp_method)
            state.g = system.new_g(state.lifts, state.coeffs, state.xe)
            E = solvation_energy(state, system.cavity, disc, opts.model).total
            if not np.isfinite(E):
                raise DivergenceError("non-finite energy", kind="diverged")
            inc = 0.0 if E == 0.0 and E_prev == 0.0 else (
                np.inf if E == 0.0 else increment(E, E_prev))
            trace.records.append(IterationRecord(k, E, inc, dd, max(fps), int(sum(fps)), bc))
            # increments below tol are round-off and inner-solve noise, not a trend
            rising = rising + 1 if inc > max(inc_prev, opts.tol) else 0
            inc_prev = inc
            E_prev = E
            if inc <= opts.tol and trace.converged_at is None:
                trace.converged_at = k
            if not opts.run_all and inc <= opts.tol:
                trace.status = "converged"
                break
            if rising >= opts.oscillation_window:
                trace.status = "oscillating"
                trace.message = f"increment grew for {rising} consecutive outer iterations"
                break
        else:
            if opts.run_all:
                trace.status = "converged" if trace.converged_at is not None else "max_iter"
            else:
                trace.status = "max_iter"
                trace.message = f"no convergence within {opts.max_outer} outer iterations"
    except DivergenceError as exc:
        trace.status = "diverged"
        trace.message = str(exc)
    trace.wall_time = time.perf_counter() - t0
    return state, trace


def outer_solve(cavity: CavityModel, disc: Discretization, options: SolverOptions | None = None,
                raise_on_failure: bool = True):
    """Solve the coupled problem; returns (GlobalUnknowns, SolveTrace).

    With ``raise_on_failure`` a non-converged run raises
    ``NonConvergenceError`` (max iterations) or ``DivergenceError``
    (NaN, overflow or oscillation), carrying the trace.
    """
    opts = options or SolverOptions()
    system = CoupledSystem(cavity, disc, opts.model)
    state, trace = run_outer(system, opts)
    if raise_on_failure and trace.status != "converged":
        if trace.status == "max_iter":
            raise NonConvergenceError(trace.message, trace=trace)
        raise DivergenceError(trace.message or trace.status, trace=trace, kind=trace.status)
    return state, trace


def final_energy(state: GlobalUnknowns, opts: SolverOptions) -> EnergyBreakdown:
    return solvation_energy(state, state.cavity, state.system.disc, opts.model)


__all__ = [
    "SolverOptions", "SolveTrace", "IterationRecord", "GlobalUnknowns", "CoupledSystem",
    "CouplingOperators", "assemble_B", "assemble_A_blocks", "assemble_coupling",
    "linear_solve", "outer_solve", "run_outer", "final_energy", "SolverError",
]
