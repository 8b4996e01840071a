"""Single-ball solvers on the unit ball.

Two problems are solved on the unit ball B (physical ball x = c + R y):

* the homogeneous screened Poisson equation, whose solution with
  boundary coefficients phi_lm is phi_lm i_l(kR r)/i_l(kR) Y_lm;
* the generalized screened Poisson problem for the reaction potential,

      -div(eps grad psi) + R^2 kappa^2 eps_s lam F(psi + psi0) psi
          = div((eps - 1) grad psi0) - R^2 kappa^2 eps_s lam F(..) psi0,

  with Dirichlet data on |y| = 1. The solution is split as the harmonic
  lift u1 of the boundary data plus a correction w that vanishes on the
  sphere. On the annulus delta <= r <= 1, w = sum_{p,i} X[p, i] rho_i(r)
  Y_p(s); inside r < delta it is continued harmonically, which enters the
  weak form as a Dirichlet-to-Neumann term on r = delta.

Galerkin coefficients are stored as arrays of shape (nY, N); flattening in
C order gives the flat index k = N (l^2 + l + m) + (i - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, cg

from . import specfun
from .errors import DivergenceError, NonConvergenceError
from .quad import annulus_nodes, lebedev, lgl

SINH_LIMIT = 700.0


@dataclass(frozen=True)
class Discretization:
    lmax: int = 7
    n_radial: int = 15
    n_lgl: int = 30
    n_leb: int = 86

    def __post_init__(self):
        if self.lmax < 0 or self.n_radial < 1 or self.n_lgl < 2:
            raise ValueError("invalid discretization sizes")
        lebedev(self.n_leb)  # validates the size

    @property
    def nY(self) -> int:
        return (self.lmax + 1) ** 2

    @property
    def n_local(self) -> int:
        return self.nY * self.n_radial

    @cached_property
    def leb(self):
        return lebedev(self.n_leb)

    @cached_property
    def lgl(self):
        return lgl(self.n_lgl)

    @cached_property
    def l(self) -> np.ndarray:
        return specfun.degrees(self.lmax)

    @cached_property
    def _harmonics(self):
        Y, gY = specfun.real_sph_harm_grad(self.lmax, self.leb.points)
        Y.setflags(write=False)
        gY.setflags(write=False)
        return Y, gY

    @property
    def Y(self) -> np.ndarray:
        """Harmonics at the Lebedev nodes, (n_leb, nY)."""
        return self._harmonics[0]

    @property
    def gradY(self) -> np.ndarray:
        """Surface gradients at the Lebedev nodes, (n_leb, nY, 3)."""
        return self._harmonics[1]

    @cached_property
    def Yw(self) -> np.ndarray:
        """Weighted harmonics w_n Y_p(s_n); projection is values @ Yw."""
        return self.Y * self.leb.weights[:, None]

    @property
    def exact_gram(self) -> bool:
        """Whether the Lebedev rule integrates products of harmonics exactly."""
        return self.leb.order >= 2 * self.lmax


def galerkin_flat_index(l: int, m: int, i: int, n_radial: int) -> int:
    """Flat position of coefficient (i, l, m), i starting at 1, in 0-based storage."""
    return n_radial * (l * l + l + m) + (i - 1)


@dataclass(frozen=True, eq=False)
class RadialTables:
    """Radial basis data for one inner radius delta."""

    delta: float
    r: np.ndarray  # LGL nodes mapped to [delta, 1]
    wr: np.ndarray  # (1-delta)/2 w_m r_m^2
    rho: np.ndarray  # (n_lgl, N)
    drho: np.ndarray
    rho_delta: np.ndarray  # (N,)
    drho_delta: np.ndarray
    drho_one: np.ndarray

    @classmethod
    def build(cls, delta: float, disc: Discretization) -> "RadialTables":
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        r, wr = annulus_nodes(delta, disc.lgl)
        rho, drho = specfun.radial_basis_table(disc.n_radial, delta, r)
        ends, dends = specfun.radial_basis_table(disc.n_radial, delta, [delta, 1.0])
        return cls(delta, r, wr, rho, drho, ends[0], dends[0], dends[1])


# ---------------------------------------------------------------------------
# elementary operations


def hsp_solve(phi_e, kappa_scaled: float):
    """Coefficients of the screened-harmonic solution with boundary data phi_e.

    The solution inside the unit ball is phi_e[p] i_l(k r)/i_l(k) Y_p, so the
    boundary coefficients fully determine it; see ``hsp_eval``.
    """
    if kappa_scaled < 0:
        raise ValueError("kappa_scaled must be nonnegative")
    return np.array(phi_e, dtype=float, copy=True)


def hsp_eval(coeffs, kappa_scaled: float, y) -> np.ndarray:
    """Evaluate the screened-harmonic solution at unit-ball points ``y`` (n, 3)."""
    coeffs = np.asarray(coeffs, dtype=float)
    lmax = int(round(np.sqrt(coeffs.size))) - 1
    y = np.atleast_2d(np.asarray(y, dtype=float))
    r = np.linalg.norm(y, axis=1)
    s = _directions(y, r)
    ratio = specfun.i_ratio(lmax, kappa_scaled, r, 1.0)[:, specfun.degrees(lmax)]
    return (specfun.real_sph_harm(lmax, s) * ratio) @ coeffs


def harmonic_lift(phi_r, disc: Discretization) -> np.ndarray:
    """Project boundary values at the Lebedev nodes onto the harmonics."""
    return np.asarray(phi_r, dtype=float) @ disc.Yw


def sinh_ratio(phi):
    """F(phi) = sinh(phi)/phi with F(0) = 1; raises on |phi| > 700."""
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise DivergenceError("non-finite potential in sinh(phi)/phi", kind="diverged")
    if np.any(np.abs(phi) > SINH_LIMIT):
        raise DivergenceError("potential too large for sinh(phi)/phi", kind="diverged")
    a = np.abs(phi)
    small = a < 1e-3
    out = np.empty_like(a)
    x2 = a[small] ** 2
    out[small] = 1.0 + x2 / 6.0 * (1.0 + x2 / 20.0 * (1.0 + x2 / 42.0))
    big = ~small
    out[big] = np.sinh(a[big]) / a[big]
    return float(out) if out.ndim == 0 else out


def dtn_term(coeffs, delta: float, rt: RadialTables | None = None):
    """Normal derivative of the inner harmonic extension at r = delta.

    Returns gamma_lm * l / delta with gamma_lm = sum_i X[p, i] rho_i(delta).
    """
    coeffs = np.asarray(coeffs, dtype=float)
    nY, N = coeffs.shape
    if rt is None:
        ends, _ = specfun.radial_basis_table(N, delta, [delta])
        rho_delta = ends[0]
    else:
        rho_delta = rt.rho_delta
    gamma = coeffs @ rho_delta
    l = specfun.degrees(int(round(np.sqrt(nY))) - 1)
    return gamma * l / delta


def _directions(y, r):
    s = np.zeros_like(y)
    pos = r > 0
    s[pos] = y[pos] / r[pos, None]
    s[~pos] = (0.0, 0.0, 1.0)
    return s


def eval_local(coeffs, lift, delta: float, y) -> np.ndarray:
    """Reaction potential (lift + correction) at unit-ball points ``y`` (n, 3)."""
    coeffs = np.asarray(coeffs, dtype=float)
    lift = np.asarray(lift, dtype=float)
    nY, N = coeffs.shape
    lmax = int(round(np.sqrt(nY))) - 1
    y = np.atleast_2d(np.asarray(y, dtype=float))
    r = np.linalg.norm(y, axis=1)
    if np.any(r > 1.0 + 1e-12):
        raise ValueError("evaluation point outside the unit ball")
    out = specfun.solid_harmonics(lmax, y) @ lift
    outer = r >= delta
    if np.any(outer):
        ro = np.minimum(r[outer], 1.0)
        rho, _ = specfun.radial_basis_table(N, delta, ro)
        Y = specfun.solid_harmonics(lmax, _directions(y[outer], r[outer]))
        out[outer] += np.einsum("np,pi,ni->n", Y, coeffs, rho)
    if np.any(~outer):
        ends, _ = specfun.radial_basis_table(N, delta, [delta])
        gamma = coeffs @ ends[0]
        out[~outer] += specfun.solid_harmonics(lmax, y[~outer] / delta) @ gamma
    return out


def radial_derivative_coeffs(coeffs, lift, rt: RadialTables, l) -> np.ndarray:
    """Coefficients of d/dr psi_r at r = 1 (unit-ball scaling)."""
    return l * lift + coeffs @ rt.drho_one


# ---------------------------------------------------------------------------
# local problem


@dataclass(eq=False)
class LocalProblem:
    """Data of one GSP problem sampled at the annulus quadrature nodes.

    ``eps``, ``lam`` and ``psi0`` have shape (n_lgl, n_leb); ``grad_psi0`` is
    the gradient with respect to unit-ball coordinates, (n_lgl, n_leb, 3).
    ``screening`` is R^2 kappa^2 eps_s. ``source`` and ``inner_flux`` are
    optional extra right-hand sides (volume density on the annulus and
    flux coefficients on r = delta).
    """

    delta: float
    disc: Discretization
    eps: np.ndarray
    lam: np.ndarray
    psi0: np.ndarray
    grad_psi0: np.ndarray
    screening: float
    lift: np.ndarray
    nonlinear: bool = True
    source: np.ndarray | None = None
    inner_flux: np.ndarray | None = None
    radial: RadialTables = field(init=False)

    def __post_init__(self):
        self.radial = RadialTables.build(self.delta, self.disc)
        shape = (self.disc.n_lgl, self.disc.n_leb)
        for name in ("eps", "lam", "psi0"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
        self.lift = np.asarray(self.lift, dtype=float)

    @classmethod
    def from_functions(cls, delta, disc, eps_fn, lam_fn, psi0_fn, grad_psi0_fn,
                       screening, lift=None, nonlinear=True, **extra) -> "LocalProblem":
        """Sample field callables (taking unit-ball points (n, 3)) at the nodes."""
        y = annulus_points(delta, disc)
        pts = y.reshape(-1, 3)
        shape = y.shape[:2]
        eps = np.asarray(eps_fn(pts), dtype=float).reshape(shape)
        lam = np.asarray(lam_fn(pts), dtype=float).reshape(shape)
        psi0 = np.asarray(psi0_fn(pts), dtype=float).reshape(shape)
        gpsi0 = np.asarray(grad_psi0_fn(pts), dtype=float).reshape(shape + (3,))
        if lift is None:
            lift = np.zeros(disc.nY)
        return cls(delta, disc, eps, lam, psi0, gpsi0, screening, lift, nonlinear, **extra)

    @property
    def is_linear(self) -> bool:
        return (not self.nonlinear) or self.screening == 0.0 or not np.any(self.lam)


def annulus_points(delta: float, disc: Discretization) -> np.ndarray:
    """Unit-ball coordinates of the annulus nodes, (n_lgl, n_leb, 3)."""
    r, _ = annulus_nodes(delta, disc.lgl)
    return r[:, None, None] * disc.leb.points[None, :, :]


# ---------------------------------------------------------------------------
# assembly


def _kron4(G, D):
    """sum_m G[m] (x) D[m] arranged as a (nY*N, nY*N) matrix in (p, i) order."""
    nY, N = G.shape[1], D.shape[1]
    T = np.tensordot(G, D, axes=(0, 0))  # (p, q, i, j)
    return T.transpose(0, 2, 1, 3).reshape(nY * N, nY * N)


def _gram_stack(disc: Discretization, coef):
    """Lambda_m[p, q] = sum_n w_n coef[m, n] Y_p Y_q for each row of ``coef``."""
    Yw = disc.Y.T[None, :, :] * (coef * disc.leb.weights[None, :])[:, None, :]
    return Yw @ disc.Y


def _grad_gram_stack(disc: Discretization, coef):
    """H_m[p, q] = sum_n w_n coef[m, n] gradY_p . gradY_q."""
    gY = disc.gradY.transpose(1, 0, 2).reshape(disc.nY, -1)  # (p, n*3)
    wc = np.repeat(coef * disc.leb.weights[None, :], 3, axis=1)
    return (gY[None, :, :] * wc[:, None, :]) @ gY.T


def _shell_split(disc, coef):
    """Partition radial shells into exactly-uniform ones and the rest."""
    uniform = np.ptp(coef, axis=1) == 0.0
    if not disc.exact_gram:
        uniform[:] = False
    return uniform


def mass_matrix(disc: Discretization, rt: RadialTables, coef) -> np.ndarray:
    """Dense M[(p,i),(q,j)] = int coef rho_i rho_j Y_p Y_q over the annulus."""
    nY, N = disc.nY, disc.n_radial
    out = np.zeros((nY * N, nY * N))
    active = np.any(coef != 0.0, axis=1)
    uniform = _shell_split(disc, coef) & active
    general = active & ~uniform
    if np.any(uniform):
        c = coef[uniform, 0]
        D = np.einsum("m,mi,mj->ij", rt.wr[uniform] * c, rt.rho[uniform], rt.rho[uniform])
        out += np.kron(np.eye(nY), D)
    if np.any(general):
        G = _gram_stack(disc, coef[general])
        D = rt.wr[general, None, None] * rt.rho[general, :, None] * rt.rho[general, None, :]
        out += _kron4(G, D)
    return out


def stiffness_matrix(disc: Discretization, rt: RadialTables, eps) -> np.ndarray:
    """Dense int eps grad(rho_i Y_p) . grad(rho_j Y_q) plus the DtN block."""
    nY, N = disc.nY, disc.n_radial
    l = disc.l
    out = np.zeros((nY * N, nY * N))
    uniform = _shell_split(disc, eps)
    general = ~uniform
    Drr = rt.wr[:, None, None] * rt.drho[:, :, None] * rt.drho[:, None, :]
    Dtt = (rt.wr / rt.r ** 2)[:, None, None] * rt.rho[:, :, None] * rt.rho[:, None, :]
    if np.any(uniform):
        c = eps[uniform, 0]
        A = np.einsum("m,mij->ij", c, Drr[uniform])
        B = np.einsum("m,mij->ij", c, Dtt[uniform])
        blocks = A[None] + (l * (l + 1))[:, None, None] * B[None]
        out += sla.block_diag(*blocks)
    if np.any(general):
        G = _gram_stack(disc, eps[general])
        H = _grad_gram_stack(disc, eps[general])
        out += _kron4(G, Drr[general]) + _kron4(H, Dtt[general])
    # Dirichlet-to-Neumann coupling to the harmonic interior
    dtn = rt.delta * np.outer(rt.rho_delta, rt.rho_delta)
    out += sla.block_diag(*(l[:, None, None] * dtn[None]))
    return out


def synthesize(disc: Discretization, rt: RadialTables, coeffs) -> np.ndarray:
    """Correction w at the annulus nodes, (n_lgl, n_leb)."""
    return rt.rho @ np.asarray(coeffs).T @ disc.Y.T


def analyze(disc: Discretization, rt: RadialTables, vals) -> np.ndarray:
    """Galerkin projection sum_{m,n} W_m w_n vals rho_i Y_p, returned as (nY, N)."""
    T = vals @ disc.Yw  # (m, p)
    return T.T @ (rt.wr[:, None] * rt.rho)


def lift_at_nodes(disc: Discretization, rt: RadialTables, lift) -> np.ndarray:
    rl = rt.r[:, None] ** disc.l[None, :]
    return (rl * lift[None, :]) @ disc.Y.T


def lift_gradient_at_nodes(disc: Discretization, rt: RadialTables, lift) -> np.ndarray:
    """Gradient of the harmonic lift at the annulus nodes, (n_lgl, n_leb, 3)."""
    l = disc.l
    rl1 = rt.r[:, None] ** (l[None, :] - 1.0)
    rl1[:, l == 0] = 0.0
    radial = (rl1 * (l * lift)[None, :]) @ disc.Y.T  # (m, n)
    tang = np.tensordot(rl1 * lift[None, :], disc.gradY, axes=(1, 1))  # (m, n, 3)
    return tang + radial[:, :, None] * disc.leb.points[None, :, :]


class LocalSolver:
    """Cached operators for one GSP problem.

    The linear part K + screening M(lam) is factorized once. In the
    nonlinear case the extra mass term screening M(lam (F - 1)) is applied
    matrix-free and the system is solved by conjugate gradients
    preconditioned with the cached factorization.
    """

    def __init__(self, problem: LocalProblem):
        self.p = problem
        disc, rt = problem.disc, problem.radial
        self.K = stiffness_matrix(disc, rt, problem.eps)
        self.M_lin = problem.screening * mass_matrix(disc, rt, problem.lam)
        A = self.K + self.M_lin
        self.A_lin = 0.5 * (A + A.T)
        self.asym = float(np.max(np.abs(A - A.T), initial=0.0))
        self.lu = sla.cho_factor(self.A_lin, check_finite=True)
        self.ion_shells = np.flatnonzero(np.any(problem.lam != 0.0, axis=1))
        self.eps_shells = np.flatnonzero(np.any(problem.eps != 1.0, axis=1))
        self.last_cg_iters = 0

    # -- fields ----------------------------------------------------------
    def psi_r_nodes(self, X, shells=None) -> np.ndarray:
        p = self.p
        rt = p.radial
        vals = lift_at_nodes(p.disc, rt, p.lift) + synthesize(p.disc, rt, X)
        return vals if shells is None else vals[shells]

    def factor_nodes(self, X) -> np.ndarray:
        """Nonlinear factor F(psi_r + psi0) on the annulus nodes (1 where lam = 0)."""
        p = self.p
        F = np.ones_like(p.lam)
        if p.is_linear or self.ion_shells.size == 0:
            return F
        sh = self.ion_shells
        F[sh] = sinh_ratio(self.psi_r_nodes(X, sh) + p.psi0[sh])
        return F

    # -- right-hand side -------------------------------------------------
    def load(self, F) -> np.ndarray:
        p, disc, rt = self.p, self.p.disc, self.p.radial
        b = np.zeros((disc.nY, disc.n_radial))
        sh = self.eps_shells
        if sh.size:
            glift = lift_gradient_at_nodes(disc, rt, p.lift)[sh]
            G = (p.eps[sh] - 1.0)[:, :, None] * (glift + p.grad_psi0[sh])
            Gr = np.einsum("mnc,nc->mn", G, disc.leb.points)
            T1 = Gr @ disc.Yw  # (m, p)
            gYw = (disc.gradY * disc.leb.weights[:, None, None]).transpose(0, 2, 1)
            T2 = G.reshape(sh.size, -1) @ gYw.reshape(-1, disc.nY)
            b -= T1.T @ (rt.wr[sh, None] * rt.drho[sh])
            b -= T2.T @ ((rt.wr[sh] / rt.r[sh])[:, None] * rt.rho[sh])
        sh = self.ion_shells
        if sh.size and p.screening:
            u = lift_at_nodes(disc, rt, p.lift)[sh] + p.psi0[sh]
            vals = p.screening * p.lam[sh] * F[sh] * u
            T = vals @ disc.Yw
            b -= T.T @ (rt.wr[sh, None] * rt.rho[sh])
        if p.source is not None:
            b += analyze(disc, rt, p.source)
        if p.inner_flux is not None:
            b += rt.delta ** 2 * np.outer(p.inner_flux, rt.rho_delta)
        return b

    # -- linear solves ---------------------------------------------------
    def _apply_correction(self, x, coef):
        """screening * M(coef) x, matrix-free on the ion shells."""
        p, disc, rt = self.p, self.p.disc, self.p.radial
        sh = self.ion_shells
        X = x.reshape(disc.nY, disc.n_radial)
        vals = (rt.rho[sh] @ X.T @ disc.Y.T) * coef
        T = vals @ disc.Yw
        return (p.screening * (T.T @ (rt.wr[sh, None] * rt.rho[sh]))).ravel()

    def solve(self, F, rhs, x0=None) -> np.ndarray:
        """Solve (K + screening M(lam F)) X = rhs."""
        b = rhs.ravel()
        nY, N = self.p.disc.nY, self.p.disc.n_radial
        if self.p.is_linear or self.ion_shells.size == 0:
            self.last_cg_iters = 0
            return sla.cho_solve(self.lu, b).reshape(nY, N)
        coef = self.p.lam[self.ion_shells] * (F[self.ion_shells] - 1.0)
        if not np.any(coef):
            self.last_cg_iters = 0
            return sla.cho_solve(self.lu, b).reshape(nY, N)
        n = b.size
        A = LinearOperator((n, n), dtype=float,
                           matvec=lambda v: self.A_lin @ v + self._apply_correction(v, coef))
        P = LinearOperator((n, n), dtype=float, matvec=lambda v: sla.cho_solve(self.lu, v))
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = cg(A, b, x0=None if x0 is None else x0.ravel(), rtol=1e-13, atol=0.0,
                     maxiter=500, M=P, callback=cb)
        self.last_cg_iters = count[0]
        if info != 0:
            # fall back to a dense factorization of the full operator
            full = self.A_lin + self.p.screening * mass_matrix(
                self.p.disc, self.p.radial, self.p.lam * (F - 1.0))
            x = sla.solve(0.5 * (full + full.T), b, assume_a="pos")
        return x.reshape(nY, N)

    # -- fixed point -----------------------------------------------------
    def fixed_point(self, init=None, damping=0.5, tol=1e-4, max_iter=100, raise_on_fail=True):
        """Damped fixed-point iteration; returns (coeffs, iterations, history)."""
        disc = self.p.disc
        X = np.zeros((disc.nY, disc.n_radial)) if init is None else np.array(init, dtype=float)
        history = []
        if self.p.is_linear:
            F = np.ones_like(self.p.lam)
            X = self.solve(F, self.load(F), X)
            if not np.all(np.isfinite(X)):
                raise DivergenceError("non-finite local solution", kind="diverged")
            return X, 1, [0.0]
        for nu in range(1, max_iter + 1):
            F = self.factor_nodes(X)
            X_aux = self.solve(F, self.load(F), X)
            X_new = X + damping * (X_aux - X)
            if not np.all(np.isfinite(X_new)):
                raise DivergenceError("non-finite fixed-point iterate", kind="diverged",
                                      residual=history)
            diff = np.linalg.norm(X_new - X)
            nrm = np.linalg.norm(X_new)
            change = 0.0 if diff == 0.0 else diff / nrm
            history.append(change)
            X = X_new
            if change <= tol:
                return X, nu, history
        if raise_on_fail:
            raise NonConvergenceError(
                f"fixed point did not converge in {max_iter} iterations",
                residual=history[-1] if history else None, trace=history)
        return X, max_iter, history


def assemble_local(problem: LocalProblem, w_prev=None):
    """Dense system (A, F) of one fixed-point step frozen at ``w_prev``.

    A = stiffness(eps) + DtN + screening * mass(lam * F(psi_prev + psi0)),
    returned symmetrized together with the flattened load vector.
    """
    disc = problem.disc
    solver = LocalSolver(problem)
    X = np.zeros((disc.nY, disc.n_radial)) if w_prev is None else np.asarray(w_prev)
    F = solver.factor_nodes(X)
    A = solver.K + problem.screening * mass_matrix(disc, problem.radial, problem.lam * F)
    return 0.5 * (A + A.T), solver.load(F).ravel()


def gsp_solve(problem: LocalProblem, init=None, damping: float = 0.5, tol: float = 1e-4,
              max_iter: int = 100):
    """Solve the local GSP problem; returns (coeffs (nY, N), iterations)."""
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    X, nu, _ = LocalSolver(problem).fixed_point(init, damping, tol, max_iter)
    return X, nu
