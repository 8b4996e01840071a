"""One-atom solve over r_0: test energy, E_s and fixed-point counts per point."""

import argparse
from pathlib import Path

from ddpb import io
from ddpb.cli import solve_atoms

FIX = Path(__file__).resolve().parents[1] / "fixtures"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--values", default="0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")
    p.add_argument("--policy", default="center", help="eval_radius_policy")
    p.add_argument("--damping", type=float, default=None)
    args = p.parse_args()
    atoms = io.parse_pqr((FIX / "one_atom.pqr").read_text())
    cfg = io.parse_config((FIX / "one_atom.cfg").read_text())
    cfg = cfg.with_value("eval_radius_policy", args.policy)
    if args.damping is not None:
        cfg = cfg.with_value("damping", str(args.damping))
    print("r_0,test_energy,E_s,status,outer_iters,fp_first")
    for v in args.values.split(","):
        rep = solve_atoms(atoms, cfg.with_value("r_0", v))
        recs = rep["trace"]["records"]
        print(f"{v},{rep['test_energy']:.6f},{rep['energy']['total']:.6f},{rep['status']},"
              f"{len(recs)},{recs[0]['fp_loops']}")


if __name__ == "__main__":
    main()
