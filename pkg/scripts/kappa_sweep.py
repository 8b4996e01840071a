"""E_s of the HF fixture over Debye constants spanning the small-kappa plateau."""

import argparse
from pathlib import Path

from ddpb import io
from ddpb.cli import solve_atoms

FIX = Path(__file__).resolve().parents[1] / "fixtures"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--values", default="1e-6,2e-6,1e-5,1e-4,1e-3,1e-2,0.1,1")
    args = p.parse_args()
    atoms = io.parse_pqr((FIX / "hf.pqr").read_text())
    cfg = io.parse_config((FIX / "hf_kappa.cfg").read_text())
    print("kappa,E_s,status")
    for v in args.values.split(","):
        rep = solve_atoms(atoms, cfg.with_value("kappa", v))
        print(f"{v},{rep['energy']['total']:.12g},{rep['status']}")


if __name__ == "__main__":
    main()
