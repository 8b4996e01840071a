"""Command-line entry point: ``ddpb solve|sweep|compare|rotate``.

Exit codes: 0 converged, 2 max iterations, 3 diverged or oscillating,
64 usage error. ``solve`` writes JSON; the other commands write CSV with a
header row and a config-hash column.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io
from .ball_solvers import Discretization
from .cavity import Atom, build_cavity
from .energy import compare_npb_lpb, one_atom_test_energy
from .global_system import SolverOptions, final_energy, outer_solve

EXIT_CODES = {"converged": 0, "max_iter": 2, "diverged": 3, "oscillating": 3}
EXIT_USAGE = 64


class UsageError(Exception):
    pass


def discretization(cfg: io.RunConfig) -> Discretization:
    return Discretization(cfg.lmax, cfg.n_radial, cfg.n_lgl, cfg.n_leb)


def solver_options(cfg: io.RunConfig, **extra) -> SolverOptions:
    return SolverOptions(tol=cfg.tol, max_outer=cfg.max_outer, max_dd=cfg.max_dd,
                         max_fp=cfg.max_fp, damping=cfg.damping, model=cfg.model, **extra)


def solve_atoms(atoms, cfg: io.RunConfig) -> dict:
    """Run one solve on atoms given in config length units; returns a report dict."""
    atoms_au, params = io.convert_units(atoms, cfg)
    cav = build_cavity(atoms_au, params)
    disc = discretization(cfg)
    opts = solver_options(cfg)
    state, trace = outer_solve(cav, disc, opts, raise_on_failure=False)
    report = {"config": io.config_dict(cfg), "config_hash": io.config_hash(cfg),
              "status": trace.status, "trace": trace.as_dict()}
    try:
        report["energy"] = final_energy(state, opts).as_dict()
    except ValueError:
        report["energy"] = None
    if cav.n_spheres == 1 and report["energy"] is not None:
        report["test_energy"] = one_atom_test_energy(state, disc, io.eval_radius(cfg))
    return report


def _read(path):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def _load(args):
    try:
        atoms = io.parse_pqr(_read(args.pqr))
        cfg = io.parse_config(_read(args.config)) if args.config else io.RunConfig()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return atoms, cfg


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows) -> str:
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DDPB_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def cmd_solve(pqr_path, config_path=None) -> tuple[str, int]:
    atoms, cfg = _load(argparse.Namespace(pqr=pqr_path, config=config_path))
    report = solve_atoms(atoms, cfg)
    return json.dumps(report, indent=2, sort_keys=True) + "\n", EXIT_CODES[report["status"]]


def _sweep_point(job):
    atoms, cfg = job
    rep = solve_atoms(atoms, cfg)
    recs = rep["trace"]["records"]
    energy = rep["energy"]["total"] if rep["energy"] else float("nan")
    return [energy, rep.get("test_energy", ""), rep["status"], len(recs),
            sum(r["dd_loops"] for r in recs), sum(r["fp_total"] for r in recs),
            recs[0]["fp_loops"] if recs else 0, io.config_hash(cfg)]


SWEEP_HEADER = ["value", "E_s", "test_energy", "status", "outer_iters", "dd_loops",
                "fp_loops", "fp_first", "config_hash"]


def cmd_sweep(pqr_path, config_path, vary, values) -> tuple[str, int]:
    atoms, cfg = _load(argparse.Namespace(pqr=pqr_path, config=config_path))
    if not values:
        raise UsageError("sweep needs at least one value")
    if vary not in io.config_dict(cfg):
        raise UsageError(f"unknown config key '{vary}'")
    try:
        cfgs = [cfg.with_value(vary, v) for v in values]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = _parallel_map(_sweep_point, [(atoms, c) for c in cfgs])
    return _csv(SWEEP_HEADER, [[v] + r for v, r in zip(values, rows)]), 0


def cmd_compare(pqr_path, config_path, radii) -> tuple[str, int]:
    atoms, cfg = _load(argparse.Namespace(pqr=pqr_path, config=config_path))
    if len(atoms) != 1:
        raise UsageError("compare needs a one-atom molecule")
    atoms_au, params = io.convert_units(atoms, cfg)
    f = io.length_factor(cfg)
    try:
        rows = compare_npb_lpb(atoms_au, params, discretization(cfg),
                               np.asarray(radii, dtype=float) * f, solver_options(cfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = [[r / f, a, b, v, io.config_hash(cfg)] for r, a, b, v in rows]
    return _csv(["r", "psi_npb", "psi_lpb", "var", "config_hash"], out), 0


def rotated(atoms, theta: float):
    """Rotate atom 2 about atom 1 by ``theta`` in the y-z plane."""
    c = np.array(atoms[0].center)
    v = np.array(atoms[1].center) - c
    ct, st = np.cos(theta), np.sin(theta)
    w = np.array([v[0], ct * v[1] - st * v[2], st * v[1] + ct * v[2]])
    return [atoms[0], Atom(tuple(c + w), atoms[1].charge, atoms[1].radius)]


def _rotate_point(job):
    atoms, cfg, theta = job
    rep = solve_atoms(rotated(atoms, theta) if theta != 0.0 else atoms, cfg)
    energy = rep["energy"]["total"] if rep["energy"] else float("nan")
    return [energy, rep["status"]]


def cmd_rotate(pqr_path, config_path, n_angles: int) -> tuple[str, int]:
    atoms, cfg = _load(argparse.Namespace(pqr=pqr_path, config=config_path))
    if len(atoms) != 2:
        raise UsageError("rotate needs a two-atom molecule")
    if n_angles < 1:
        raise UsageError("n_angles must be >= 1")
    thetas = [0.0] if n_angles == 1 else list(np.linspace(0.0, 2 * np.pi, n_angles))
    rows = _parallel_map(_rotate_point, [(atoms, cfg, float(t)) for t in thetas])
    h = io.config_hash(cfg)
    return _csv(["angle", "E_s", "status", "config_hash"],
                [[t] + r + [h] for t, r in zip(thetas, rows)]), 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddpb", description="Domain-decomposition Poisson-Boltzmann solver")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("solve", "sweep", "compare", "rotate"):
        s = sub.add_parser(name)
        s.add_argument("--pqr", required=True)
        s.add_argument("--config")
        s.add_argument("--out")
        if name == "sweep":
            s.add_argument("--vary", required=True)
            s.add_argument("--values", required=True)
        if name == "compare":
            s.add_argument("--radii", required=True, help="comma-separated distances")
        if name == "rotate":
            s.add_argument("--n-angles", type=int, default=21)
    return p


def _split(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "solve":
            text, code = cmd_solve(args.pqr, args.config)
        elif args.command == "sweep":
            text, code = cmd_sweep(args.pqr, args.config, args.vary, _split(args.values))
        elif args.command == "compare":
            try:
                radii = [float(v) for v in _split(args.radii)]
            except ValueError:
                raise UsageError("radii must be numbers") from None
            text, code = cmd_compare(args.pqr, args.config, radii)
        else:
            text, code = cmd_rotate(args.pqr, args.config, args.n_angles)
    except UsageError as exc:
        sys.stderr.write(f"ddpb: error: {exc}\n")
        return EXIT_USAGE
    _emit(text, args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
