"""Trajectory CSVs under the closed-form SIR strategy for arbitrary parameters.

    python3 scripts/figure_data.py --beta 3 --gamma 4 --c 1.5 --start 4,4 --start 8,1

Without ``--start`` a lattice of odd-coordinate states is used.  Each run is
written as ``run_XX.csv`` with columns ``t,x1,x2,phase``; impulses appear as
pairs of zero-duration rows with ``phase=impulse``.
"""

import argparse
from pathlib import Path

from impulse_dp.cli import cmd_figures
from impulse_dp.config import parse_config


def start(text):
    x1, x2 = (float(v) for v in text.split(","))
    return [x1, x2]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--beta", type=float, required=True)
    ap.add_argument("--gamma", type=float, required=True)
    ap.add_argument("--c", type=float, required=True)
    ap.add_argument("--N", type=float, default=10.0)
    ap.add_argument("--start", type=start, action="append")
    ap.add_argument("--t-max", type=float, default=20.0)
    ap.add_argument("--out", default="out/figure_data")
    args = ap.parse_args()
    cfg = parse_config({"params": {"beta": args.beta, "gamma": args.gamma, "c": args.c,
                                   "N": args.N},
                        "figures": {"names": [], "starts": args.start, "t_max": args.t_max},
                        "output_dir": args.out})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cmd_figures(cfg, out)


if __name__ == "__main__":
    raise SystemExit(main())
