"""Outer-iteration history on the caffeine fixture, errors against the last iterate."""

import argparse
from dataclasses import replace
from pathlib import Path

from ddpb import io
from ddpb.cavity import build_cavity
from ddpb.cli import discretization, solver_options
from ddpb.global_system import outer_solve

FIX = Path(__file__).resolve().parents[1] / "fixtures"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--iters", type=int, default=15)
    args = p.parse_args()
    atoms = io.parse_pqr((FIX / "caffeine.pqr").read_text())
    cfg = io.parse_config((FIX / "caffeine.cfg").read_text())
    a_au, params = io.convert_units(atoms, cfg)
    opts = replace(solver_options(cfg), run_all=True, max_outer=args.iters)
    _, trace = outer_solve(build_cavity(a_au, params), discretization(cfg), opts,
                           raise_on_failure=False)
    E_ref = trace.records[-1].energy
    print(f"# converged_at={trace.converged_at} status={trace.status}")
    print("k,E_s,inc,error_vs_last,dd_loops,fp_loops")
    for r in trace.records:
        print(f"{r.k},{r.energy:.12g},{r.inc:.3e},{abs(r.energy - E_ref):.3e},"
              f"{r.dd_loops},{r.fp_loops}")


if __name__ == "__main__":
    main()
