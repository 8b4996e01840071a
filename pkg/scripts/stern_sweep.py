"""Stern-layer width sweeps.

``--molecule one_atom`` reports status and fixed-point counts; ``--molecule hf``
reports the stress and osmotic terms, whose sum shrinks as the layer widens.
"""

import argparse
from pathlib import Path

from ddpb import io
from ddpb.cli import solve_atoms

FIX = Path(__file__).resolve().parents[1] / "fixtures"
SETUPS = {"one_atom": ("one_atom.pqr", "one_atom.cfg", "0.1,0.3,0.5,0.7,1.0"),
          "hf": ("hf.pqr", "hf_l7.cfg", "0,1,2,4,8,16,30")}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--molecule", choices=sorted(SETUPS), default="hf")
    p.add_argument("--values")
    args = p.parse_args()
    pqr, cfg_name, default = SETUPS[args.molecule]
    atoms = io.parse_pqr((FIX / pqr).read_text())
    cfg = io.parse_config((FIX / cfg_name).read_text())
    print("a,E_s,stress,osmotic,stress_plus_osmotic,status,fp_first")
    for v in (args.values or default).split(","):
        rep = solve_atoms(atoms, cfg.with_value("a", v))
        e = rep["energy"] or {}
        recs = rep["trace"]["records"]
        s, o = e.get("stress_term", float("nan")), e.get("osmotic_term", float("nan"))
        print(f"{v},{e.get('total', float('nan')):.10g},{s:.6g},{o:.6g},{s + o:.6g},"
              f"{rep['status']},{recs[0]['fp_loops'] if recs else 0}")


if __name__ == "__main__":
    main()
