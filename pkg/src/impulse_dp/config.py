"""JSON run configuration.

A run is described by one JSON object.  Every section and every key is
optional; omitted entries take the defaults of the dataclasses below, and an
unknown key anywhere raises ``ConfigError`` naming its dotted path.

```json
{
  "model": "sir",
  "params": {"beta": 4, "gamma": 3, "c": 5, "N": 10},
  "flow": {"kind": "closed-form", "step": 0.001},
  "discount": {"alpha": 0.5},
  "grid": {"counts": [161, 161]},
  "theta_search": {"count": 64, "refinement": 1},
  "quadrature": {"rel_tol": 1e-8, "abs_tol": 1e-10},
  "solve": {"tol": 1e-4, "max_iter": 200, "initial": "zero"},
  "verify": {"source": "numeric", "field": null},
  "simulate": {"strategy": "analytic", "starts": [[10, 1]]},
  "figures": {"names": ["fig1"], "starts": null, "t_max": 20},
  "output_dir": "out",
  "seed": 0,
  "workers": 1
}
```

Built-in models are ``sir`` (params ``beta``, ``gamma``, ``c``, ``N``),
``deterioration`` (``reset_cost``) and ``constant`` (``k``,
``impulse_cost``).  ``discount`` wraps any of them.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bellman import Grid, ThetaSearchConfig
from .discount import constant_cost_model, deterioration_model
from .errors import ConfigError
from .flow import QuadratureConfig
from .sir import SirParams, sir_flow_spec, sir_model
from .verify import DifEqMargins

MODELS = ("sir", "deterioration", "constant")
PARAM_NAMES = {"sir": ("beta", "gamma", "c", "N"), "deterioration": ("reset_cost",),
               "constant": ("k", "impulse_cost")}

# margins for fields sampled on a grid: one-cell generator bias, coarser gap
GRID_MARGINS = DifEqMargins(forward=5e-2, gap=1e-3, backward=5e-2, exclusion_cells=3,
                            gen_tol=5e-2)


@dataclass(frozen=True)
class FlowConfig:
    kind: str = "closed-form"
    step: float = 1e-3


@dataclass(frozen=True)
class DiscountConfig:
    alpha: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    counts: tuple = (161, 161)


@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-4
    max_iter: int = 200
    initial: str = "zero"


@dataclass(frozen=True)
class VerifyConfig:
    """``field`` defaults to ``value.csv`` in the output directory.

    Margin entries left as ``None`` take the analytic defaults for
    ``source="analytic"`` and the grid defaults for ``source="numeric"``.
    """

    source: str = "numeric"
    field: Optional[str] = None
    forward: Optional[float] = None
    gap: Optional[float] = None
    backward: Optional[float] = None
    exclusion_cells: Optional[int] = None
    gen_tol: Optional[float] = None
    residual: bool = True


@dataclass(frozen=True)
class SimulateConfig:
    """``strategy`` is ``analytic`` (SIR only), ``numeric``, ``stop`` or ``impulse``.

    Without ``starts``, ``n_random`` states are drawn from X with the run seed.
    """

    strategy: str = "analytic"
    starts: Optional[tuple] = None
    n_random: int = 10
    max_impulses: int = 1000
    horizon: Optional[float] = None
    sample_dt: float = 0.01
    t_max: float = 20.0


@dataclass(frozen=True)
class FiguresConfig:
    """``names`` picks parameter sets fig1..fig4; an empty list uses the run's own params."""

    names: tuple = ("fig1", "fig2", "fig3", "fig4")
    starts: Optional[tuple] = None
    t_max: float = 20.0
    line_samples: int = 101
    N: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    model: str = "sir"
    params: dict = field(default_factory=lambda: {"beta": 4.0, "gamma": 3.0, "c": 5.0, "N": 10.0})
    flow: FlowConfig = FlowConfig()
    discount: Optional[DiscountConfig] = None
    grid: GridConfig = GridConfig()
    theta_search: ThetaSearchConfig = ThetaSearchConfig()
    quadrature: QuadratureConfig = QuadratureConfig()
    solve: SolveConfig = SolveConfig()
    verify: VerifyConfig = VerifyConfig()
    simulate: SimulateConfig = SimulateConfig()
    figures: FiguresConfig = FiguresConfig()
    output_dir: str = "out"
    seed: int = 0
    workers: int = 1

    @property
    def alpha(self) -> float:
        return 0.0 if self.discount is None else float(self.discount.alpha)

    def sir_params(self) -> SirParams:
        if self.model != "sir":
            raise ConfigError("model", "this command needs the sir model")
        return SirParams(**{k: float(v) for k, v in self.params.items()})

    def build(self):
        """``(model, flow)`` of the base problem."""
        if self.model == "sir":
            p = self.sir_params()
            return sir_model(p), sir_flow_spec(p, self.flow.kind, self.flow.step)
        if self.model == "deterioration":
            return deterioration_model(**self.params)
        return constant_cost_model(**self.params)

    def make_grid(self, model) -> Grid:
        if len(self.grid.counts) != model.dim:
            raise ConfigError("grid.counts", f"expected {model.dim} entries, got "
                              f"{len(self.grid.counts)}")
        return Grid.over(model.bounds, self.grid.counts)

    def margins(self, source: str) -> DifEqMargins:
        base = DifEqMargins() if source == "analytic" else GRID_MARGINS
        v = self.verify
        over = {k: getattr(v, k) for k in ("forward", "gap", "backward", "exclusion_cells",
                                           "gen_tol") if getattr(v, k) is not None}
        return dataclasses.replace(base, **over)

    def as_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _tuple(v):
    return tuple(_tuple(x) for x in v) if isinstance(v, list) else v


def _section(cls, data, path: str):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown key")
    try:
        return cls(**{k: _tuple(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


SECTIONS = {"flow": FlowConfig, "discount": DiscountConfig, "grid": GridConfig,
            "theta_search": ThetaSearchConfig, "quadrature": QuadratureConfig,
            "solve": SolveConfig, "verify": VerifyConfig, "simulate": SimulateConfig,
            "figures": FiguresConfig}


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded JSON object into a ``RunConfig``."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "a run configuration must be a JSON object")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in top:
            raise ConfigError(key, "unknown key")
    kw = {}
    model = data.get("model", "sir")
    if model not in MODELS:
        raise ConfigError("model", f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    kw["model"] = model
    if "params" in data:
        params = data["params"]
        if not isinstance(params, dict):
            raise ConfigError("params", "expected an object")
        for key, v in params.items():
            if key not in PARAM_NAMES[model]:
                raise ConfigError(f"params.{key}", f"not a parameter of {model}")
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"params.{key}", "expected a number")
        kw["params"] = dict(params)
    elif model != "sir":
        kw["params"] = {}
    for name, cls in SECTIONS.items():
        if name in data:
            kw[name] = _section(cls, data[name], name)
    for name, typ in (("output_dir", str), ("seed", int), ("workers", int)):
        if name in data:
            if not isinstance(data[name], typ) or isinstance(data[name], bool):
                raise ConfigError(name, f"expected {typ.__name__}")
            kw[name] = data[name]
    cfg = RunConfig(**kw)
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    if cfg.model == "sir":
        try:
            cfg.sir_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError("params", str(exc)) from exc
    if cfg.flow.kind not in ("closed-form", "ode-field"):
        raise ConfigError("flow.kind", f"unknown flow kind {cfg.flow.kind!r}")
    if cfg.discount is not None and not (cfg.alpha > 0 and math.isfinite(cfg.alpha)):
        raise ConfigError("discount.alpha", "must be a positive finite number")
    if cfg.solve.initial not in ("zero", "stop"):
        raise ConfigError("solve.initial", "must be 'zero' or 'stop'")
    if cfg.solve.tol <= 0 or cfg.solve.max_iter < 1:
        raise ConfigError("solve", "tol must be > 0 and max_iter >= 1")
    if cfg.verify.source not in ("numeric", "analytic"):
        raise ConfigError("verify.source", "must be 'numeric' or 'analytic'")
    if cfg.simulate.strategy not in ("analytic", "numeric", "stop", "impulse"):
        raise ConfigError("simulate.strategy", f"unknown strategy {cfg.simulate.strategy!r}")
    if cfg.workers < 1:
        raise ConfigError("workers", "must be >= 1")


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration; all failures are ``ConfigError``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)
