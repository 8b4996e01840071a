import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddpb import specfun
from ddpb.ball_solvers import (Discretization, LocalProblem, LocalSolver,
                               assemble_local, dtn_term, eval_local, galerkin_flat_index,
                               gsp_solve, harmonic_lift, hsp_eval, hsp_solve, sinh_ratio)
from ddpb.cavity import Atom, CavityParams, build_cavity
from ddpb.errors import DivergenceError, NonConvergenceError
from ddpb.global_system import Sphere
from ddpb.specfun import HarmonicIndex

Y00 = 0.5 / np.sqrt(np.pi)


def one_atom_sphere(disc, model="npb", r0=1.5, q=1.0):
    cav = build_cavity([Atom((0, 0, 0), q, 0.5)],
                       CavityParams(r_p=0.3, a=0.2, r_0=r0, eps_s=10.0, kappa=1.0))
    return Sphere(cav, disc, 0, model)


def constant_problem(disc, delta, eps=1.0, lam=0.0, screening=0.0, **kw):
    shape = (disc.n_lgl, disc.n_leb)
    return LocalProblem(delta, disc, np.full(shape, eps), np.full(shape, lam), np.zeros(shape),
                        np.zeros(shape + (3,)), screening, np.zeros(disc.nY), **kw)


# -- indices and elementary pieces ---------------------------------------------------------


def test_galerkin_flat_index_bijection():
    lmax, N = 5, 7
    ks = [galerkin_flat_index(l, m, i, N) for l in range(lmax + 1) for m in range(-l, l + 1)
          for i in range(1, N + 1)]
    assert sorted(ks) == list(range(N * (lmax + 1) ** 2))
    # matches C-order flattening of (nY, N) storage
    X = np.zeros(((lmax + 1) ** 2, N))
    X[HarmonicIndex(2, -1).flat, 3] = 1.0
    assert np.flatnonzero(X.ravel())[0] == galerkin_flat_index(2, -1, 4, N)


def test_discretization_validation():
    with pytest.raises(ValueError):
        Discretization(n_leb=100)
    with pytest.raises(ValueError):
        Discretization(n_lgl=1)


def test_hsp_examples():
    c = np.zeros(4)
    c[0] = 1.0
    coeffs = hsp_solve(c, 1.0)
    assert hsp_eval(coeffs, 1.0, [[0, 0, 0]])[0] == pytest.approx(Y00 / np.sinh(1.0), rel=1e-14)
    assert Y00 / np.sinh(1.0) == pytest.approx(0.2820948 / 1.1752012, rel=1e-7)
    assert np.all(hsp_eval(hsp_solve(np.zeros(9), 2.0), 2.0, np.eye(3) * 0.3) == 0)
    rng = np.random.default_rng(0)
    c = rng.normal(size=16)
    s = rng.normal(size=(10, 3))
    s /= np.linalg.norm(s, axis=1)[:, None]
    np.testing.assert_allclose(hsp_eval(c, 0.7, s), specfun.real_sph_harm(3, s) @ c, atol=1e-14)
    with pytest.raises(ValueError):
        hsp_solve(c, -1.0)


def test_hsp_solution_satisfies_screened_equation():
    # FD Laplacian of the evaluated field equals kappa^2 times the field
    rng = np.random.default_rng(1)
    c = rng.normal(size=9)
    k = 1.3
    x = np.array([[0.2, -0.1, 0.3]])
    h = 1e-3
    lap = -6 * hsp_eval(c, k, x)
    for e in np.eye(3):
        lap += hsp_eval(c, k, x + h * e) + hsp_eval(c, k, x - h * e)
    assert lap[0] / h ** 2 == pytest.approx(k * k * hsp_eval(c, k, x)[0], rel=1e-5)


def test_harmonic_lift_examples():
    disc = Discretization(4, 4, 6, 50)
    lift = harmonic_lift(np.full(disc.n_leb, 3.0), disc)
    assert lift[0] == pytest.approx(3.0 * 2 * np.sqrt(np.pi), rel=1e-14)
    assert np.max(np.abs(lift[1:])) < 1e-13
    y = np.array([[0.1, 0.2, -0.3], [0, 0, 0]])
    np.testing.assert_allclose(eval_local(np.zeros((disc.nY, 4)), lift, 0.3, y), 3.0, rtol=1e-14)
    p = HarmonicIndex(2, 1).flat
    lift = harmonic_lift(disc.Y[:, p], disc)
    expect = np.zeros(disc.nY)
    expect[p] = 1.0
    np.testing.assert_allclose(lift, expect, atol=1e-13)
    assert not np.any(harmonic_lift(np.zeros(disc.n_leb), disc))


def test_sinh_ratio():
    assert sinh_ratio(0.0) == 1.0
    assert sinh_ratio(1.0) == pytest.approx(np.sinh(1.0), rel=1e-15)
    assert sinh_ratio(1e-8) == 1.0 + 1e-16 / 6
    with pytest.raises(DivergenceError):
        sinh_ratio(701.0)
    with pytest.raises(DivergenceError):
        sinh_ratio(np.nan)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-700, 700))
def test_sinh_ratio_even_and_accurate(x):
    v = sinh_ratio(x)
    assert v == sinh_ratio(-x)
    assert v >= 1.0
    if abs(x) > 1e-3:
        assert v == pytest.approx(np.sinh(abs(x)) / abs(x), rel=1e-14)
    else:
        # series oracle with one more term than the implementation needs
        x2 = x * x
        ref = 1 + x2 / 6 + x2 ** 2 / 120 + x2 ** 3 / 5040 + x2 ** 4 / 362880
        assert v == pytest.approx(ref, rel=1e-15)


def test_dtn_examples():
    delta = 0.5
    N = 4
    rho_d = specfun.radial_basis_table(N, delta, [delta])[0][0]
    X = np.zeros((4, N))
    X[0] = 1.0
    assert dtn_term(X, delta)[0] == 0.0
    # gamma_{1,0} = 1 using the first basis function only
    X = np.zeros((4, N))
    X[HarmonicIndex(1, 0).flat, 0] = 1.0 / rho_d[0]
    assert dtn_term(X, delta)[HarmonicIndex(1, 0).flat] == pytest.approx(2.0)


def test_dtn_matches_fd_of_extension():
    rng = np.random.default_rng(4)
    delta, N = 0.4, 5
    X = rng.normal(size=(9, N))
    lift = np.zeros(9)
    s = np.array([0.48, 0.6, 0.64])
    h = 1e-6
    # the inner extension only, evaluated just inside delta
    vals = eval_local(X, lift, delta, np.array([(delta - 2 * h) * s, (delta - h) * s]))
    fd = (vals[1] - vals[0]) / h
    exact = specfun.real_sph_harm(2, s[None])[0] @ dtn_term(X, delta)
    assert fd == pytest.approx(exact, rel=1e-4)


def test_eval_local_boundary_and_continuity():
    rng = np.random.default_rng(5)
    delta = 0.35
    X = rng.normal(size=(16, 6))
    lift = rng.normal(size=16)
    s = rng.normal(size=(8, 3))
    s /= np.linalg.norm(s, axis=1)[:, None]
    on_sphere = eval_local(X, lift, delta, s)
    np.testing.assert_allclose(on_sphere, specfun.real_sph_harm(3, s) @ lift, atol=1e-13)
    eps = 1e-14
    a = eval_local(X, lift, delta, s * (delta - eps))
    b = eval_local(X, lift, delta, s * delta)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(b)))
    with pytest.raises(ValueError):
        eval_local(X, lift, delta, [[0, 0, 1.5]])


# -- assembled operator ---------------------------------------------------------------------


def test_constant_coefficient_operator_is_laplace_plus_dtn():
    disc = Discretization(2, 5, 12, 26)
    prob = constant_problem(disc, 0.3)
    A, F = assemble_local(prob)
    assert np.max(np.abs(A - A.T)) == 0.0
    assert not np.any(F)
    # block diagonal in (l, m)
    N = disc.n_radial
    for p in range(disc.nY):
        for q in range(disc.nY):
            if p != q:
                assert np.max(np.abs(A[p * N:(p + 1) * N, q * N:(q + 1) * N])) < 1e-13


def test_operator_symmetric_positive_definite_one_atom():
    disc = Discretization(2, 6, 12, 26)
    sp = one_atom_sphere(disc)
    assert sp.solver.asym <= 1e-10
    rng = np.random.default_rng(2)
    A, _ = assemble_local(sp.problem, rng.normal(size=(disc.nY, disc.n_radial)) * 0.3)
    assert np.min(np.linalg.eigvalsh(A)) > 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_operator_spd_random_fields(seed):
    # Lebedev rule below exactness forces the general (pointwise) assembly path
    rng = np.random.default_rng(seed)
    disc = Discretization(2, 4, 8, 14)
    shape = (disc.n_lgl, disc.n_leb)
    prob = LocalProblem(rng.uniform(0.1, 0.8), disc, rng.uniform(1, 50, shape),
                        rng.uniform(0, 1, shape), rng.normal(size=shape),
                        rng.normal(size=shape + (3,)), rng.uniform(0, 5), rng.normal(size=disc.nY))
    solver = LocalSolver(prob)
    A = solver.K + solver.M_lin
    assert np.max(np.abs(A - A.T)) <= 1e-10 * np.max(np.abs(A))
    assert np.min(np.linalg.eigvalsh(solver.A_lin)) > 0


def test_manufactured_solution_constant_coefficients():
    # u = a(r) Y_21 on the annulus; a(r) - a(1) r^2 lies in the span of the radial basis
    disc = Discretization(3, 6, 12, 50)
    delta, c = 0.3, 2.0
    p = HarmonicIndex(2, 1).flat
    l = 2
    a = lambda r: 1 + r ** 2 - 0.5 * r ** 3
    da = lambda r: 2 * r - 1.5 * r ** 2
    d2a = lambda r: 2 - 3 * r
    prob = constant_problem(disc, delta, eps=1.0, lam=1.0, screening=c, nonlinear=False)
    rt = prob.radial
    r = rt.r[:, None]
    lap = d2a(r) + 2 * da(r) / r - l * (l + 1) * a(r) / r ** 2
    prob.source = (-lap + c * a(r)) * disc.Y[None, :, p]
    flux = np.zeros(disc.nY)
    flux[p] = l * a(delta) / delta - da(delta)
    prob.inner_flux = flux
    lift = np.zeros(disc.nY)
    lift[p] = a(1.0)
    prob.lift = lift
    X, nu = gsp_solve(prob)
    assert nu == 1
    rng = np.random.default_rng(0)
    s = rng.normal(size=(20, 3))
    s /= np.linalg.norm(s, axis=1)[:, None]
    rr = rng.uniform(delta, 1, size=(20, 1))
    got = eval_local(X, lift, delta, rr * s)
    want = a(rr[:, 0]) * specfun.real_sph_harm(3, s)[:, p]
    assert np.max(np.abs(got - want)) < 1e-8


def test_harmonic_data_gives_pure_lift():
    # kappa = 0, eps = 1: the lift already solves the problem
    disc = Discretization(3, 5, 10, 50)
    prob = constant_problem(disc, 0.4)
    prob.lift = np.random.default_rng(3).normal(size=disc.nY)
    X, nu = gsp_solve(prob)
    assert nu == 1
    assert np.max(np.abs(X)) < 1e-13


def test_derivative_jump_shrinks_under_refinement():
    jumps = []
    for N, nl in [(10, 20), (20, 40)]:
        disc = Discretization(6, N, nl, 110)
        sp = one_atom_sphere(disc, "lpb")
        lift = np.zeros(disc.nY)
        lift[0] = -0.2 * np.sqrt(np.pi)
        sp.problem.lift = lift
        X, _, _ = sp.solver.fixed_point()
        rt = sp.problem.radial
        l, d = disc.l, rt.delta
        inner = l * (X @ rt.rho_delta) / d
        outer = X @ rt.drho_delta + l * d ** (l - 1.0) * lift
        jumps.append(np.max(np.abs(inner - outer)))
    assert jumps[1] <= 0.5 * jumps[0]


# -- fixed point ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_npb():
    disc = Discretization(4, 8, 16, 50)
    sp = one_atom_sphere(disc)
    # boundary data: the initial coupling value minus psi0 on the sphere
    g = 0.1 * np.exp(-sp.R) / sp.R
    sp.problem.lift = harmonic_lift(np.full(disc.n_leb, g) - sp.psi0_gamma, disc)
    return sp


def test_damping_one_and_half_agree(small_npb):
    tol = 1e-10
    X1, n1 = gsp_solve(small_npb.problem, damping=1.0, tol=tol, max_iter=300)
    X2, n2 = gsp_solve(small_npb.problem, damping=0.5, tol=tol, max_iter=300)
    assert np.linalg.norm(X1 - X2) <= 10 * tol * np.linalg.norm(X1)
    assert n1 < n2


def test_fixed_point_residual_decreases(small_npb):
    _, _, hist = small_npb.solver.fixed_point(damping=0.5, tol=1e-10, max_iter=300)
    assert all(b <= a for a, b in zip(hist[-4:], hist[-3:]))


def test_fixed_point_nonconvergence_raises(small_npb):
    with pytest.raises(NonConvergenceError) as exc:
        gsp_solve(small_npb.problem, tol=1e-14, max_iter=2)
    assert exc.value.residual is not None


def test_fixed_point_argument_checks(small_npb):
    with pytest.raises(ValueError):
        gsp_solve(small_npb.problem, damping=0.0)
    with pytest.raises(ValueError):
        gsp_solve(small_npb.problem, tol=0.0)


def test_linear_problem_single_iteration(small_npb):
    disc = small_npb.problem.disc
    lin = one_atom_sphere(disc, "lpb")
    lin.problem.lift = small_npb.problem.lift
    X, nu = gsp_solve(lin.problem)
    assert nu == 1
    # one-shot linear solve with the dense operator
    A, F = assemble_local(lin.problem)
    np.testing.assert_allclose(X.ravel(), np.linalg.solve(A, F), rtol=1e-9, atol=1e-12)


def test_pcg_solve_matches_dense(small_npb):
    rng = np.random.default_rng(8)
    disc = small_npb.problem.disc
    Xp = rng.normal(size=(disc.nY, disc.n_radial)) * 0.5
    A, F = assemble_local(small_npb.problem, Xp)
    Fn = small_npb.solver.factor_nodes(Xp)
    X = small_npb.solver.solve(Fn, small_npb.solver.load(Fn))
    np.testing.assert_allclose(X.ravel(), np.linalg.solve(A, F), rtol=1e-8, atol=1e-11)


def test_nan_lift_diverges(small_npb):
    disc = small_npb.problem.disc
    sp = one_atom_sphere(disc)
    lift = np.zeros(disc.nY)
    lift[0] = np.nan
    sp.problem.lift = lift
    with pytest.raises((DivergenceError, ValueError)):
        sp.solver.fixed_point()
