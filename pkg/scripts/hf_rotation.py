"""Rotate F about H over n angles at two angular resolutions; print the energy spread."""

import argparse
import csv
import io as stdio
from pathlib import Path

import numpy as np

from ddpb.cli import cmd_rotate

FIX = Path(__file__).resolve().parents[1] / "fixtures"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n-angles", type=int, default=21)
    p.add_argument("--configs", default="hf_l7.cfg,hf_l11.cfg")
    args = p.parse_args()
    for name in args.configs.split(","):
        text, _ = cmd_rotate(str(FIX / "hf.pqr"), str(FIX / name), args.n_angles)
        print(f"# {name}")
        print(text, end="")
        E = np.array([float(r["E_s"]) for r in csv.DictReader(stdio.StringIO(text))])
        print(f"# relative spread {(E.max() - E.min()) / abs(E.mean()):.4%}")


if __name__ == "__main__":
    main()
