"""Solve the four SIR parameter sets on the 161x161 triangle grid and compare
with the closed-form value functions.

    python3 scripts/solve_regimes.py [--counts 161] [--out out/regimes]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from impulse_dp.bellman import Grid, fixed_point_residual, make_operator, value_iteration
from impulse_dp.cli import write_value_csv
from impulse_dp.sir import (FIGURE_PARAMS, analytic_value, in_intervention_region, sir_flow_spec,
                            sir_model)
from impulse_dp.verify import exclusion_band, intervention_set


def run(name, p, counts, out, tol=1e-4):
    model, flow = sir_model(p), sir_flow_spec(p)
    grid = Grid.over(model.bounds, (counts, counts))
    op = make_operator(model, flow, grid)
    t0 = time.perf_counter()
    V, reports = value_iteration(model, flow, grid, tol=tol, operator=op)
    solve_time = time.perf_counter() - t0
    _, thetas, actions = op.apply(V)
    nodes = grid.nodes()
    L_true = grid.scatter(in_intervention_region(p, nodes), fill=False).astype(bool)
    far = ~exclusion_band(grid, L_true, 2)[grid.mask]
    err = np.abs(V.values - analytic_value(p, nodes))
    L_num = intervention_set(model, V, grid, 1e-3)
    res = fixed_point_residual(model, flow, V, operator=op)
    write_value_csv(out / f"{name}_value.csv", V, thetas, actions)
    return {"params": {"beta": p.beta, "gamma": p.gamma, "c": p.c, "N": p.N},
            "sweeps": len(reports), "solve_seconds": solve_time,
            "max_error_off_band": float(err[far].max()), "max_error": float(err.max()),
            "max_fixed_point_residual": float(res.max()),
            "L_mismatch_nodes": int((L_num != L_true)[grid.mask].sum())}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--counts", type=int, default=161)
    ap.add_argument("--out", default="out/regimes")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name, p in FIGURE_PARAMS.items():
        p = type(p)(p.beta, p.gamma, p.c, N=10.0)
        summary[name] = run(name, p, args.counts, out)
        print(name, json.dumps(summary[name]))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
