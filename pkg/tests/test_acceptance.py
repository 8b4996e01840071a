"""End-to-end acceptance scenarios.

Each test prints one ``CRITERION n: PASS|FAIL`` line (also collected into the
terminal summary) and then asserts at the stated tolerance.
"""

import csv
import io as stdio
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ddpb import io
from ddpb.cavity import build_cavity
from ddpb.cli import cmd_rotate, discretization, solve_atoms, solver_options
from ddpb.global_system import outer_solve

ROOT = Path(__file__).resolve().parents[1]
FIX = ROOT / "fixtures"

pytestmark = pytest.mark.slow


def load(pqr, cfg):
    return io.parse_pqr((FIX / pqr).read_text()), io.parse_config((FIX / cfg).read_text())


def fp_first(rep):
    recs = rep["trace"]["records"]
    return recs[0]["fp_loops"] if recs else 0


# -- 1: one-atom table --------------------------------------------------------------------

R0 = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0]
TABLE_E = [-0.55717, -1.0153, -1.2499, -1.2824, -1.1818, -1.027]
TABLE_LOOPS = [5, 6, 7, 9, 11, 15]


def test_one_atom_table(criterion):
    atoms, cfg = load("one_atom.pqr", "one_atom.cfg")
    t0 = time.perf_counter()
    reps = [solve_atoms(atoms, cfg.with_value("r_0", str(r))) for r in R0]
    elapsed = time.perf_counter() - t0
    E = np.array([r["test_energy"] for r in reps])
    loops = [fp_first(r) for r in reps]
    rel = np.abs(E - TABLE_E) / np.abs(TABLE_E)
    peak = R0[int(np.argmax(np.abs(E)))]
    ok_E = bool(np.all(rel <= 0.10))
    ok_peak = peak == 2.0
    ok_loops = all(abs(a - b) <= 2 for a, b in zip(loops, TABLE_LOOPS))
    ok_time = elapsed <= 60.0
    ok = criterion(1, ok_E and ok_peak and ok_loops and ok_time,
                   f"E={np.round(E, 4).tolist()} max rel err {rel.max():.3g}; "
                   f"|E| peak at r0={peak}; loops={loops}; {elapsed:.1f}s")
    assert all(r["status"] == "converged" for r in reps)
    assert ok


# -- 2: Stern layer -----------------------------------------------------------------------


def test_stern_layer(criterion):
    atoms, cfg = load("one_atom.pqr", "one_atom.cfg")
    reps = {a: solve_atoms(atoms, cfg.with_value("a", str(a))) for a in (0.1, 0.3, 0.5, 1.0)}
    loops = [fp_first(reps[a]) for a in (0.1, 0.3, 0.5)]
    ok_loops = all(reps[a]["status"] == "converged" for a in (0.1, 0.3, 0.5)) and all(
        abs(n - m) <= 2 for n, m in zip(loops, (5, 6, 7)))
    ok_div = reps[1.0]["status"] in ("diverged", "oscillating")
    ok = criterion(2, ok_loops and ok_div,
                   f"loops a=0.1,0.3,0.5: {loops} (want 5,6,7 +-2); "
                   f"a=1.0 status {reps[1.0]['status']}")
    assert ok


# -- 3: outer iterations on caffeine ------------------------------------------------------


def test_outer_iterations_caffeine(criterion):
    atoms, cfg = load("caffeine.pqr", "caffeine.cfg")
    assert 15 <= len(atoms) <= 30
    a_au, params = io.convert_units(atoms, cfg)
    opts = replace(solver_options(cfg), run_all=True, max_outer=15)
    _, trace = outer_solve(build_cavity(a_au, params), discretization(cfg), opts,
                           raise_on_failure=False)
    E = np.array(trace.energies)
    k_conv = trace.converged_at
    err = np.abs(E - E[-1])
    dd = [r.dd_loops for r in trace.records]
    ok_conv = k_conv is not None and k_conv <= 15
    drop = err[0] / err[k_conv - 1] if ok_conv and err[k_conv - 1] > 0 else np.inf
    ok_drop = ok_conv and drop >= 100
    ok_dd = all(b <= a for a, b in zip(dd, dd[1:]))
    ok = criterion(3, ok_conv and ok_drop and ok_dd,
                   f"converged at k={k_conv}; error drop {drop:.3g}x; dd loops {dd}")
    assert ok


# -- 4: rotation spread -------------------------------------------------------------------


def spread(cfg_name):
    text, code = cmd_rotate(str(FIX / "hf.pqr"), str(FIX / cfg_name), 21)
    rows = list(csv.DictReader(stdio.StringIO(text)))
    assert code == 0 and len(rows) == 21
    assert all(r["status"] == "converged" for r in rows)
    E = np.array([float(r["E_s"]) for r in rows])
    return (E.max() - E.min()) / abs(E.mean())


def test_rotation_spread(criterion):
    t0 = time.perf_counter()
    s7, s11 = spread("hf_l7.cfg"), spread("hf_l11.cfg")
    elapsed = time.perf_counter() - t0
    ok = criterion(4, s11 < s7 and s11 < 0.10 and elapsed <= 600,
                   f"relative spread lmax7 {s7:.3%}, lmax11 {s11:.3%}, ratio {s11 / s7:.3g}; "
                   f"{elapsed:.0f}s")
    assert ok


# -- 5: kappa -> 0 plateau ----------------------------------------------------------------


def test_kappa_plateau(criterion):
    atoms, cfg = load("hf.pqr", "hf_kappa.cfg")
    E = [solve_atoms(atoms, cfg.with_value("kappa", k))["energy"]["total"]
         for k in ("1e-6", "2e-6")]
    rel = abs(E[0] - E[1]) / abs(E[0])
    ok = criterion(5, rel <= 1e-3, f"E(1e-6)={E[0]:.8g}, E(2e-6)={E[1]:.8g}, rel diff {rel:.3g}")
    assert ok


# -- 6: property suite --------------------------------------------------------------------

PROPERTY_TESTS = [
    "tests/test_specfun.py::test_lebedev_orthonormality_all_rules",
    "tests/test_quad.py::test_lgl_exactness",
    "tests/test_ball_solvers.py::test_operator_symmetric_positive_definite_one_atom",
    "tests/test_ball_solvers.py::test_operator_spd_random_fields",
    "tests/test_ball_solvers.py::test_manufactured_solution_constant_coefficients",
    "tests/test_ball_solvers.py::test_eval_local_boundary_and_continuity",
    "tests/test_ball_solvers.py::test_derivative_jump_shrinks_under_refinement",
    "tests/test_global_system.py::test_lpb_quadratic_scaling",
    "tests/test_global_system.py::test_npb_matches_lpb_for_small_charge",
    "tests/test_global_system.py::test_frozen_factor_equals_lpb",
    "tests/test_global_system.py::test_permutation_invariance",
    "tests/test_energy.py::test_npb_lpb_energy_agree_small_charge",
    "tests/test_energy.py::test_frozen_factor_var_within_tolerance",
    "tests/test_cli.py::test_solve_deterministic_apart_from_wall_time",
    "tests/test_cli.py::test_sweep_parallel_bitwise",
]


def test_property_suite(criterion):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *PROPERTY_TESTS], cwd=ROOT, capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = criterion(6, proc.returncode == 0, tail)
    assert ok, proc.stdout[-3000:]
