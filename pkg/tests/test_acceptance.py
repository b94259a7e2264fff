"""End-to-end acceptance checks, one marker group per criterion.

The terminal summary prints one PASS/FAIL line per criterion.  Each check
also prints its measured numbers, visible with ``pytest -s``.
"""


import numpy as np
import pytest

from impulse_dp.bellman import Grid, fixed_point_residual, value_iteration
from impulse_dp.core import INFINITY, StationaryStrategy, impulse_now_strategy, stop_strategy
from impulse_dp.discount import (constant_cost_model, deterioration_model, direct_value_iteration,
                                 solve_discounted)
from impulse_dp.flow import advance
from impulse_dp.sim import evaluate_strategy
from impulse_dp.sir import (RegimeTag, SirParams, analytic_policy, analytic_value, classify,
                            gradual_threshold, in_intervention_region, sir_flow, sir_flow_spec,
                            sir_model, threshold_policy, upsilon)
from impulse_dp.verify import (DifEqMargins, backward_generators,
                               check_differential_form, check_h_monotone, exclusion_band,
                               forward_generator, intervention_set, violations)
from impulse_dp.config import GRID_MARGINS

from conftest import CHEAP, COUNTS, REGIMES, SUPER, TOL, solve

ALL = list(REGIMES)


def _band(s, cells):
    L_true = s.grid.scatter(in_intervention_region(s.p, s.grid.nodes()), fill=False).astype(bool)
    return L_true, exclusion_band(s.grid, L_true, cells)


# 1. analytic-oracle equivalence --------------------------------------------

@pytest.mark.acceptance(1)
@pytest.mark.parametrize("name", ALL)
def test_value_iteration_matches_closed_form(name):
    s = solve(name)
    _, band = _band(s, 2)
    far = ~band[s.grid.mask]
    err = np.abs(s.V.values - analytic_value(s.p, s.grid.nodes()))[far]
    print(f"[1] {name}: {s.grid.counts} grid, {len(s.reports)} sweeps, "
          f"{s.seconds:.1f}s, max error {err.max():.3g} on {far.sum()} nodes")
    assert s.grid.counts == COUNTS
    assert s.reports[-1].sup_change <= TOL
    assert err.max() <= 0.05
    assert s.seconds <= 300.0


# 2. policy-region equivalence ----------------------------------------------

@pytest.mark.acceptance(2)
@pytest.mark.parametrize("name", ALL)
def test_intervention_set_within_one_cell_of_threshold(name):
    s = solve(name)
    L_true, band1 = _band(s, 1)
    L_num = intervention_set(s.model, s.V, s.grid, margin=1e-6)
    wrong = (L_num != L_true) & s.grid.mask
    print(f"[2] {name}: {wrong.sum()} mismatched nodes, "
          f"{(wrong & ~band1).sum()} farther than one cell")
    assert not (wrong & ~band1).any()
    if classify(s.p).tag is RegimeTag.SUBCRITICAL_EXPENSIVE:
        rows = np.argwhere(L_num & s.grid.mask)[:, 1]
        assert set(rows.tolist()) == {0}


# 3. differential form on the closed-form values ----------------------------

@pytest.mark.acceptance(3)
@pytest.mark.parametrize("name", ALL)
def test_closed_form_value_satisfies_differential_form(name):
    p = REGIMES[name]
    model, flow = sir_model(p), sir_flow_spec(p)
    grid = Grid.over(model.bounds, COUNTS)
    V = lambda X: analytic_value(p, X)  # noqa: E731
    verdicts = check_differential_form(model, flow, V, grid, DifEqMargins())
    bad = violations(verdicts)
    print(f"[3] {name}: {len(verdicts)} nodes, {len(bad)} violations")
    assert not bad


@pytest.mark.acceptance(3)
@pytest.mark.parametrize("name", ALL)
def test_backward_generator_nonnegative_on_intervention_set(name, rng):
    p = REGIMES[name]
    model, flow = sir_model(p), sir_flow_spec(p)
    X = model.bounds.sample(4000, rng)
    slope = classify(p).threshold_slope
    if slope is None:
        X = np.stack([X[:300, 0], np.zeros(300)], axis=-1)
    else:
        X = X[in_intervention_region(p, X)][:300]
    b, _ = backward_generators(lambda Y: analytic_value(p, Y), flow, model, X)
    finite = b[np.isfinite(b)]
    print(f"[3] {name}: {len(X)} points of L, min backward generator {finite.min():.3g}")
    assert len(finite) >= 0.9 * len(X)
    assert finite.min() >= -1e-3


@pytest.mark.acceptance(3)
def test_backward_generator_value_inside_dispersal_region():
    p = SirParams(4.0, 3.0, 5.0, N=20.0)  # (10, 1) lies outside the N = 10 triangle
    model, flow = sir_model(p), sir_flow_spec(p)
    est = forward_generator(lambda X: analytic_value(p, X), flow, model, np.array([10.0, 1.0]),
                            backward=True)
    print(f"[3] backward generator at (10,1): {est.backward:.10g} (75/11 = {75 / 11:.10g})")
    assert est.backward == pytest.approx(75.0 / 11.0, abs=1e-2)


# 4. integral and differential forms agree on the numeric field ------------------

def _patch(s, center=(2.0, 5.0), radius=0.3, bump=0.1):
    X = s.grid.nodes()
    inside = np.max(np.abs(X - np.asarray(center)), axis=1) <= radius
    return s.V.with_values(s.V.values + bump * inside), inside


@pytest.mark.acceptance(4)
@pytest.mark.parametrize("name", ALL)
def test_numeric_field_passes_both_forms(name):
    s = solve(name)
    res = fixed_point_residual(s.model, s.flow, s.V, operator=s.op)
    verdicts = check_differential_form(s.model, s.flow, s.V, s.grid, GRID_MARGINS)
    bad = violations(verdicts)
    print(f"[4] {name}: residual {res.max():.3g}, {len(bad)} violations in {len(verdicts)}")
    assert res.max() <= 3 * TOL
    assert not bad


@pytest.mark.acceptance(4)
@pytest.mark.parametrize("name", ALL)
def test_perturbed_field_fails_both_forms(name):
    s = solve(name)
    W, inside = _patch(s)
    assert not np.any(in_intervention_region(s.p, s.grid.nodes()[inside]))
    res = fixed_point_residual(s.model, s.flow, W, operator=s.op)
    verdicts = check_differential_form(s.model, s.flow, W, s.grid, GRID_MARGINS)
    bad = violations(verdicts)
    print(f"[4] {name} perturbed: residual {res.max():.3g}, {len(bad)} violations")
    assert res.max() > 3 * TOL
    assert bad


# 5. double zero of the impulse-gap profile ---------------------------------

@pytest.mark.acceptance(5)
def test_upsilon_double_zero_at_threshold():
    b, g, c = CHEAP.beta, CHEAP.gamma, CHEAP.c
    w = (b + b * c - g * c) / (g * c)
    d = 1e-5
    slope = (upsilon(CHEAP, w + d) - upsilon(CHEAP, w - d)) / (2 * d)
    print(f"[5] w*={w}, upsilon={float(upsilon(CHEAP, w)):.3g}, derivative={float(slope):.3g}")
    assert abs(upsilon(CHEAP, w)) <= 1e-12
    assert abs(slope) <= 1e-6


# 6. gradual-control limits ---------------------------------------------------

@pytest.mark.acceptance(6)
@pytest.mark.parametrize("p,kind,limit", [
    (SUPER, "zeta", 1.0 / SUPER.c),
    (CHEAP, "xi", (CHEAP.beta + CHEAP.beta * CHEAP.c - CHEAP.gamma * CHEAP.c)
     / (CHEAP.gamma * CHEAP.c)),
])
def test_gradual_threshold_limits(p, kind, limit):
    U = 10.0 ** np.arange(1, 9)
    vals = gradual_threshold(p, U, kind)
    steps = np.diff(vals)
    print(f"[6] {kind}: {vals.tolist()} -> {limit}")
    assert abs(vals[-1] - limit) <= 1e-6
    assert np.all(steps > 0) or np.all(steps < 0)


# 7. simulation optimality ----------------------------------------------------

def _suboptimal(p):
    slope = classify(p).threshold_slope or 1.0 / p.c
    model = sir_model(p)

    def delay(t):
        return StationaryStrategy(wait=lambda x: t, act=lambda x: 1)

    def inverted(x):
        return 0.0 if x[1] > slope * x[0] else INFINITY

    return {
        "stop": stop_strategy(model),
        "impulse-now": impulse_now_strategy(model),
        "threshold-20%": threshold_policy(p, 0.8 * slope),
        "threshold+20%": threshold_policy(p, 1.2 * slope),
        "threshold-20%-no-wait": threshold_policy(p, 0.8 * slope, cheap_wait=False),
        "threshold+20%-no-wait": threshold_policy(p, 1.2 * slope, cheap_wait=False),
        "threshold-50%": threshold_policy(p, 0.5 * slope),
        "delay-1": delay(1.0),
        "delay-3": delay(3.0),
        "inverted": StationaryStrategy(wait=inverted, act=lambda x: 1),
    }


@pytest.mark.acceptance(7)
@pytest.mark.parametrize("name", ALL)
def test_analytic_strategy_reproduces_value(name):
    p = REGIMES[name]
    model, flow = sir_model(p), sir_flow_spec(p)
    X = model.bounds.sample(50, np.random.default_rng(7))
    costs = np.array(evaluate_strategy(model, flow, analytic_policy(p), X))
    err = np.abs(costs - analytic_value(p, X))
    print(f"[7] {name}: max |cost - V| = {err.max():.3g} over 50 states")
    assert err.max() <= 5e-3


@pytest.mark.acceptance(7)
@pytest.mark.parametrize("name", ALL)
def test_suboptimal_strategies_never_beat_value(name):
    p = REGIMES[name]
    model, flow = sir_model(p), sir_flow_spec(p)
    X = model.bounds.sample(50, np.random.default_rng(8))
    V = analytic_value(p, X)
    worst = {}
    for label, strat in _suboptimal(p).items():
        costs = np.array(evaluate_strategy(model, flow, strat, X))
        worst[label] = float(np.min(costs - V))
    print(f"[7] {name}: min (cost - V) per strategy {worst}")
    assert len(worst) == 10
    assert min(worst.values()) >= -5e-3


# 8. property suites ----------------------------------------------------------

@pytest.mark.acceptance(8)
@pytest.mark.parametrize("name", ALL)
def test_flow_identities_sampled(name, rng):
    p = REGIMES[name]
    model = sir_model(p)
    closed, ode = sir_flow_spec(p), sir_flow_spec(p, "ode-field")
    X = model.bounds.sample(200, rng)
    s, t = rng.uniform(0, 5, 200), rng.uniform(0, 5, 200)
    semi = np.abs(advance(closed, X, s + t) - advance(closed, advance(closed, X, s), t)).max()
    Xs = X[:40]
    semi_ode = np.abs(advance(ode, Xs, s[:40] + t[:40])
                      - advance(ode, advance(ode, Xs, s[:40]), t[:40])).max()
    Y = sir_flow(p, X, t)
    ratio = np.abs(Y[:, 1] / Y[:, 0] - X[:, 1] / X[:, 0] * np.exp((p.beta - p.gamma) * t)).max()
    # removed individuals accumulate at rate gamma * x2
    cons = max(abs(Xi.sum() - advance(closed, Xi, ti).sum()
                   - p.gamma * _integral_x2(closed, Xi, ti)) for Xi, ti in zip(X[:40], t[:40]))
    print(f"[8] {name}: semigroup {semi:.3g}/{semi_ode:.3g}, ratio {ratio:.3g}, "
          f"conservation {cons:.3g}")
    assert semi <= 1e-9
    assert semi_ode <= 1e-6
    assert ratio <= 1e-10
    assert cons <= 1e-8


def _integral_x2(flow, x, t):
    from scipy import integrate
    val, _ = integrate.quad(lambda u: advance(flow, x, u)[1], 0.0, t, epsabs=1e-12, epsrel=1e-12,
                            limit=200)
    return val


@pytest.mark.acceptance(8)
@pytest.mark.parametrize("name", ALL)
def test_value_iteration_increases_pointwise(name):
    s = solve(name)
    print(f"[8] {name}: monotone flags {[r.monotone_ok for r in s.reports]}")
    assert all(r.monotone_ok for r in s.reports)


@pytest.mark.acceptance(8)
@pytest.mark.parametrize("name", ALL)
def test_h_profile_monotone_on_random_trajectories(name):
    p = REGIMES[name]
    model, flow = sir_model(p), sir_flow_spec(p)
    X = model.bounds.sample(100, np.random.default_rng(9))
    V = lambda Y: analytic_value(p, Y)  # noqa: E731
    ok = [check_h_monotone(model, flow, V, x, INFINITY) for x in X]
    print(f"[8] {name}: h nondecreasing on {sum(ok)}/100 trajectories")
    assert all(ok)


@pytest.mark.acceptance(8)
@pytest.mark.parametrize("name", ALL)
def test_unique_fixed_point_from_stopping_values(name):
    s = solve(name)
    W, _ = value_iteration(s.model, s.flow, s.grid, tol=TOL, initial="stop", operator=s.op)
    gap = np.abs(W.values - s.V.values).max()
    print(f"[8] {name}: |V(from stop) - V(from 0)| = {gap:.3g}")
    assert gap <= 5 * TOL


# 9. discounted reduction -------------------------------------------------------

@pytest.mark.acceptance(9)
def test_constant_cost_fixed_point():
    model, flow = constant_cost_model(k=2.0)
    grid = Grid.over(model.bounds, (11,))
    V, _ = solve_discounted(model, flow, 0.5, grid, tol=1e-8)
    print(f"[9] constant cost: V_Y in [{V.values.min():.12g}, {V.values.max():.12g}], k/alpha=4")
    assert np.abs(V.values - 4.0).max() <= 1e-6


@pytest.mark.acceptance(9)
def test_wrapped_slice_matches_direct_discounted_iteration():
    tol = 1e-6
    model, flow = deterioration_model()
    grid = Grid.over(model.bounds, (21,))
    V, _ = solve_discounted(model, flow, 0.5, grid, tol=tol)
    D = direct_value_iteration(model, flow, 0.5, grid, tol=tol)
    gap = np.abs(V.values - D.values).max()
    print(f"[9] wrapped vs direct: {gap:.3g}")
    assert gap <= 5 * tol


@pytest.mark.acceptance(9)
@pytest.mark.parametrize("alpha", [0.25, 0.5, 2.0])
def test_discounted_value_bound(alpha):
    model, flow = deterioration_model()
    grid = Grid.over(model.bounds, (21,))
    V, _ = solve_discounted(model, flow, alpha, grid, tol=1e-6)
    bound = 1.0 / alpha  # sup y^2 = 1 on [0, 1]
    print(f"[9] alpha={alpha}: V_Y in [{V.values.min():.6g}, {V.values.max():.6g}], "
          f"bound {bound}")
    assert np.all(V.values >= 0)
    assert np.all(V.values <= bound)
