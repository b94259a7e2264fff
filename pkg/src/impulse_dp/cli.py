"""Command-line front end.

    impulse-dp solve    --config run.json [--out DIR] [--seed N] [--workers K]
    impulse-dp verify   --config run.json [--source numeric|analytic]
    impulse-dp simulate --config run.json
    impulse-dp regime   --config run.json
    impulse-dp figures  --config run.json

Exit codes: 0 success, 1 configuration or I/O error, 2 value iteration did
not converge (the partial field is still written), 3 verification found
violations.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from .bellman import GridStrategy, ValueField, fixed_point_residual, make_operator, value_iteration
from .config import RunConfig, load_config
from .core import StationaryStrategy, impulse_now_strategy, stop_strategy
from .discount import embed, make_lift, wrap_discounted
from .errors import ConfigError, NonConvergenceError
from .sim import simulate, write_trajectories
from .sir import (FIGURE_PARAMS, RegimeTag, SirParams, analytic_policy, analytic_value, classify,
                  gradual_threshold, sir_flow_spec, sir_model, threshold_line)
from .verify import check_differential_form, summarize, violations, write_summary, write_verdicts

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGED = 2
EXIT_VIOLATIONS = 3


def _fmt(v) -> str:
    return "inf" if v == math.inf else format(float(v), ".17g")


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def _summary(cfg: RunConfig, command: str, started: float, **extra) -> dict:
    return {"command": command, "git": _git_hash(), "config": cfg.as_dict(),
            "timings": {"wall_seconds": time.perf_counter() - started}, **extra}


def _problem(cfg: RunConfig):
    """``(model, flow, embed, lift)`` of the problem actually solved on the grid."""
    base, base_flow = cfg.build()
    if cfg.discount is None:
        return base, base, base_flow, None, None
    model, flow = wrap_discounted(base, base_flow, cfg.alpha)
    return base, model, flow, embed, make_lift(cfg.alpha)


def write_value_csv(path, field: ValueField, thetas, actions) -> None:
    """``x1,..,xd,V,theta_star,action``; one row per masked node, ``inf`` for stop."""
    nodes = field.grid.nodes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(field.grid.dim)] + ["V", "theta_star", "action"])
        for x, v, t, a in zip(nodes, field.values, thetas, actions):
            w.writerow([_fmt(c) for c in x] + [_fmt(v), _fmt(t), int(a)])


def write_strategy_csv(path, field: ValueField, thetas, actions) -> None:
    nodes = field.grid.nodes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(field.grid.dim)] + ["theta_star", "action"])
        for x, t, a in zip(nodes, thetas, actions):
            w.writerow([_fmt(c) for c in x] + [_fmt(t), int(a)])


def read_value_csv(path, grid):
    """Field, waits and actions from a value CSV written for ``grid``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError("verify.field", f"cannot read {path}: {exc.strerror}") from exc
    d = grid.dim
    head = [f"x{i + 1}" for i in range(d)] + ["V", "theta_star", "action"]
    if not rows or rows[0] != head:
        raise ConfigError("verify.field", f"{path} does not start with header {','.join(head)}")
    body = rows[1:]
    if len(body) != grid.size:
        raise ConfigError("verify.field", f"{path} has {len(body)} rows, grid has {grid.size} nodes")
    data = np.array([[float(v) for v in r] for r in body])
    if not np.allclose(data[:, :d], grid.nodes(), rtol=0, atol=1e-9):
        raise ConfigError("verify.field", f"{path} nodes do not match the configured grid")
    return ValueField(grid, data[:, d]), data[:, d + 1], data[:, d + 2].astype(np.int64)


def _field_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.verify.field) if cfg.verify.field else out / "value.csv"


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    started = time.perf_counter()
    base, model, flow, emb, lift = _problem(cfg)
    grid = cfg.make_grid(base)
    op = make_operator(model, flow, grid, cfg.theta_search, cfg.quadrature, cfg.workers, emb, lift)
    initial = None if cfg.solve.initial == "zero" else "stop"
    status, code = "converged", EXIT_OK
    try:
        V, reports = value_iteration(model, flow, grid, cfg.theta_search, cfg.quadrature,
                                     cfg.solve.tol, cfg.solve.max_iter, initial=initial,
                                     operator=op)
    except NonConvergenceError as exc:
        V, reports = exc.field, exc.reports
        status, code = "not converged", EXIT_NONCONVERGED
    _, thetas, actions = op.apply(V)
    write_value_csv(out / "value.csv", V, thetas, actions)
    write_strategy_csv(out / "strategy.csv", V, thetas, actions)
    info = _summary(cfg, "solve", started, status=status, sweeps=len(reports),
                    reports=[dataclasses.asdict(r) for r in reports])
    write_summary(out / "iterations.json", info)
    last = reports[-1].sup_change if reports else math.nan
    print(f"solve: {status} after {len(reports)} sweeps (last change {last:.3g}); "
          f"wrote {out / 'value.csv'}")
    return code


def cmd_verify(cfg: RunConfig, out: Path, source: str) -> int:
    started = time.perf_counter()
    if cfg.discount is not None:
        raise ConfigError("discount", "verify works on undiscounted models")
    model, flow = cfg.build()
    grid = cfg.make_grid(model)
    extra = {"source": source}
    if source == "analytic":
        p = cfg.sir_params()
        V = lambda X: analytic_value(p, X)  # noqa: E731
    else:
        V, _, _ = read_value_csv(_field_path(cfg, out), grid)
        if cfg.verify.residual:
            res = fixed_point_residual(model, flow, V, cfg.theta_search, cfg.quadrature,
                                       cfg.workers)
            extra["max_fixed_point_residual"] = float(res.max())
            extra["residual_ok"] = bool(res.max() <= 3 * cfg.solve.tol)
    margins = cfg.margins(source)
    verdicts = check_differential_form(model, flow, V, grid, margins)
    write_verdicts(out / "verdicts.csv", verdicts)
    summ = summarize(verdicts)
    bad = len(violations(verdicts))
    write_summary(out / "verify.json", _summary(cfg, "verify", started, margins=dataclasses.asdict(margins),
                                                **summ, **extra))
    print(f"verify ({source}): {summ['checked']} nodes, {summ['counts']['A']} case A, "
          f"{summ['counts']['B']} case B, {bad} violations")
    if not extra.get("residual_ok", True):
        print(f"verify: fixed-point residual {extra['max_fixed_point_residual']:.3g} exceeds "
              f"3*tol")
        return EXIT_VIOLATIONS
    return EXIT_VIOLATIONS if bad else EXIT_OK


def _starts(cfg: RunConfig, model, starts) -> np.ndarray:
    if starts is not None:
        X = np.asarray(starts, dtype=float).reshape(-1, model.dim)
        if not np.all(model.bounds.contains(X)):
            raise ConfigError("simulate.starts", "every start must lie in the state space")
        return X
    return model.bounds.sample(cfg.simulate.n_random, np.random.default_rng(cfg.seed))


def slice_strategy(strategy) -> StationaryStrategy:
    """Resolve a discounted-wrap strategy at ``s = 0``.

    The optimal wait and action do not depend on ``s`` because
    ``V((y, s)) = exp(-alpha s) V_Y(y)``; resolving on the slice also keeps
    late decisions clear of the tie tolerance once ``exp(-alpha s)`` is tiny.
    """
    def at_zero(x):
        x = np.asarray(x, dtype=float)
        return embed(x[:-1])

    return StationaryStrategy(wait=lambda x: strategy.wait(at_zero(x)),
                              act=lambda x: strategy.act(at_zero(x)))


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    started = time.perf_counter()
    sc = cfg.simulate
    base, model, flow, emb, lift = _problem(cfg)
    X = _starts(cfg, base, sc.starts)
    if sc.strategy == "analytic":
        if cfg.discount is not None:
            raise ConfigError("simulate.strategy", "no analytic strategy for discounted runs")
        strategy = analytic_policy(cfg.sir_params())
    elif sc.strategy == "stop":
        strategy = stop_strategy(model)
    elif sc.strategy == "impulse":
        strategy = impulse_now_strategy(model)
    else:
        grid = cfg.make_grid(base)
        V, thetas, actions = read_value_csv(_field_path(cfg, out), grid)
        strategy = GridStrategy(model, flow, V, cfg.theta_search, cfg.quadrature, thetas,
                                actions, lift)
        if emb is not None:
            strategy = slice_strategy(strategy)
    runs = []
    for x in X:
        x0 = emb(x) if emb is not None else x
        runs.append(simulate(model, flow, strategy, x0, sc.max_impulses, sc.horizon,
                             cfg.quadrature, sc.sample_dt, stop_path=sc.t_max))
    write_trajectories(out / "trajectories.csv", runs, labels=range(len(runs)), dim=model.dim)
    results = [{"start": [float(v) for v in x], **r.summary()} for x, r in zip(X, runs)]
    write_summary(out / "simulate.json", _summary(cfg, "simulate", started, runs=results))
    for k, r in enumerate(results):
        print(f"run {k}: start={r['start']} cost={r['total_cost']:.10g} "
              f"impulses={r['impulses']} {r['terminated']}")
    return EXIT_OK


def regime_report(p: SirParams) -> dict:
    reg = classify(p)
    rep = {"params": dataclasses.asdict(p), "regime": reg.tag.value,
           "threshold_slope": reg.threshold_slope}
    if p.beta < p.gamma:
        rep["critical_cost"] = p.beta / (p.gamma - p.beta)
    U = [10.0 ** k for k in range(1, 9)]
    if reg.tag is RegimeTag.SUPERCRITICAL:
        rep["gradual_thresholds"] = {"kind": "zeta", "U": U,
                                     "values": gradual_threshold(p, U, "zeta").tolist()}
    elif reg.tag is RegimeTag.SUBCRITICAL_CHEAP:
        rep["gradual_thresholds"] = {"kind": "xi", "U": U,
                                     "values": gradual_threshold(p, U, "xi").tolist()}
    return rep


def cmd_regime(cfg: RunConfig, out: Path) -> int:
    rep = regime_report(cfg.sir_params())
    write_summary(out / "regime.json", rep)
    slope = rep["threshold_slope"]
    line = "x2 = 0" if slope is None else f"x2 = {slope:.17g} * x1"
    print(f"regime: {rep['regime']}; intervention boundary {line}")
    return EXIT_OK


def _lattice(N: float) -> np.ndarray:
    pts = [(a, b) for a in np.arange(1.0, N, 2.0) for b in np.arange(1.0, N, 2.0) if a + b < N]
    return np.array(pts)


def cmd_figures(cfg: RunConfig, out: Path) -> int:
    started = time.perf_counter()
    fc = cfg.figures
    sets = {n: dataclasses.replace(FIGURE_PARAMS[n], N=fc.N) for n in fc.names
            if n in FIGURE_PARAMS}
    unknown = [n for n in fc.names if n not in FIGURE_PARAMS]
    if unknown:
        raise ConfigError("figures.names", f"unknown figure {unknown[0]!r}")
    if not sets:
        sets = {"run": cfg.sir_params()}
    index = {}
    for name, p in sets.items():
        model, flow = sir_model(p), sir_flow_spec(p)
        X = _starts(cfg, model, fc.starts) if fc.starts is not None else _lattice(p.N)
        runs = [simulate(model, flow, analytic_policy(p), x, stop_path=fc.t_max) for x in X]
        folder = out / name
        folder.mkdir(parents=True, exist_ok=True)
        for k, r in enumerate(runs):
            write_trajectories(folder / f"run_{k:02d}.csv", [r])
        with open(folder / "threshold.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "x2"])
            for x in threshold_line(p, fc.line_samples):
                w.writerow([_fmt(v) for v in x])
        with open(folder / "starts.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run", "x1", "x2", "total_cost", "impulses", "terminated"])
            for k, (x, r) in enumerate(zip(X, runs)):
                w.writerow([k, _fmt(x[0]), _fmt(x[1]), _fmt(r.total_cost), r.n_impulses,
                            r.terminated])
        index[name] = {**regime_report(p), "runs": len(runs),
                       "impulse_rows": 2 * sum(r.n_impulses for r in runs)}
        print(f"{name}: {index[name]['regime']}, {len(runs)} runs, "
              f"{sum(r.n_impulses for r in runs)} impulses")
    write_summary(out / "figures.json", _summary(cfg, "figures", started, figures=index))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impulse-dp", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "value iteration on the configured grid"),
                       ("verify", "differential-form check of a value function"),
                       ("simulate", "run a strategy from initial states"),
                       ("regime", "classify SIR parameters"),
                       ("figures", "trajectory data under the analytic SIR strategy")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="overrides seed")
        p.add_argument("--workers", type=int, help="overrides workers")
        if name == "verify":
            p.add_argument("--source", choices=("numeric", "analytic"),
                           help="overrides verify.source")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = {k: getattr(args, k) for k in ("seed", "workers") if getattr(args, k) is not None}
        if args.out is not None:
            over["output_dir"] = args.out
        cfg = dataclasses.replace(cfg, **over)
        if cfg.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.source or cfg.verify.source)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "regime":
            return cmd_regime(cfg, out)
        return cmd_figures(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
