import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impulse_dp.bellman import Grid, ValueField
from impulse_dp.core import INFINITY, Bounds
from impulse_dp.flow import advance
from impulse_dp.sir import SirParams, analytic_value, sir_flow_spec, sir_model
from impulse_dp.verify import (CASE_A, CASE_B, VIOLATION, DifEqMargins, backward_generators,
                               check_conditions, check_differential_form, check_h_monotone,
                               check_no_impulse_identity, classify_points, exclusion_band,
                               forward_generator, forward_generators, h_profile, impulse_gaps,
                               intervention_set, predecessors, summarize, violations,
                               write_verdicts)

SUPER = SirParams(4.0, 3.0, 5.0, N=20.0)
EXPENSIVE = SirParams(3.0, 4.0, 5.0, N=10.0)
CHEAP = SirParams(3.0, 4.0, 1.5, N=10.0)


def setup(p):
    return sir_model(p), sir_flow_spec(p), (lambda X: analytic_value(p, X))


def inside_super(x1, x2):
    return x2 * SUPER.c <= x1


def test_impulse_gaps_examples():
    m, _, V = setup(SUPER)
    g = impulse_gaps(m, V, np.array([[10.0, 1.0], [4.0, 3.0]]))
    assert g.tolist() == pytest.approx([0.0, 11.0])


@given(st.floats(0.5, 15.0), st.floats(0.05, 0.5))
def test_backward_generator_inside_isolation_region(x1, frac):
    # V = c x2 there; along the flow dV/dt + loss rate = (1 + c) beta x1 x2/(x1 + x2) - c gamma x2
    x2 = frac * x1 / SUPER.c
    m, f, V = setup(SUPER)
    b, _ = backward_generators(V, f, m, np.array([[x1, x2]]), gen_tol=1e-2)
    i = SUPER.beta * x1 * x2 / (x1 + x2)
    assert b[0] == pytest.approx((1 + SUPER.c) * i - SUPER.c * SUPER.gamma * x2, abs=1e-3)


@given(st.floats(0.5, 9.0), st.floats(0.5, 9.0))
def test_forward_generator_vanishes_where_waiting_is_optimal(x1, x2):
    if x1 + x2 > 10.0:
        x1, x2 = x1 / 2, x2 / 2
    m, f, V = setup(EXPENSIVE)
    est = forward_generator(V, f, m, np.array([x1, x2]))
    assert est.forward == pytest.approx(0.0, abs=1e-6)


def as2(X):
    return np.asarray(X, dtype=float).reshape(-1, 2)


@given(st.floats(0.5, 9.0), st.floats(0.1, 5.0), st.floats(1e-4, 0.5))
def test_predecessor_maps_forward_onto_target(x1, x2, s):
    _, f, _ = setup(SUPER)
    X = np.array([[x1, x2]])
    Z, ok = predecessors(f, X, np.array([s]))
    assert ok[0]
    assert advance(f, Z, np.array([s])) == pytest.approx(X, abs=1e-9)


def test_exclusion_band_is_chessboard_distance():
    g = Grid.over(Bounds((0.0, 0.0), (4.0, 4.0)), (5, 5))
    L = np.zeros((5, 5), dtype=bool)
    L[:2, :] = True
    band = exclusion_band(g, L, 1)
    assert band[1, :].all() and band[2, :].all()
    assert not band[0, :].any() and not band[3:, :].any()
    assert not exclusion_band(g, L, 0).any()
    assert not exclusion_band(g, np.ones((5, 5), dtype=bool), 2).any()


def test_intervention_set_matches_closed_form_region():
    m, _, V = setup(SUPER)
    g = Grid.over(m.bounds, (21, 21))
    L = intervention_set(m, V, g)
    X = g.all_nodes()
    expect = g.mask & (X[..., 1] * SUPER.c <= X[..., 0] + 1e-9)
    assert np.array_equal(L, expect)


@pytest.mark.parametrize("p", [SUPER, EXPENSIVE, CHEAP], ids=["super", "expensive", "cheap"])
def test_closed_form_value_passes_differential_check(p):
    m, f, V = setup(p)
    verdicts = check_differential_form(m, f, V, Grid.over(m.bounds, (31, 31)))
    s = summarize(verdicts)
    assert violations(verdicts) == []
    assert s["counts"][CASE_A] > 0
    # in the expensive regime 𝓛 is the x2 = 0 row, all of it inside the exclusion band
    assert (s["counts"][CASE_B] > 0) == (p is not EXPENSIVE)
    assert s["checked"] == len(verdicts)


def test_wrong_value_function_is_rejected():
    m, f, V = setup(EXPENSIVE)
    bad = classify_points(m, f, lambda X: 0.9 * V(X), np.array([[5.0, 2.0], [3.0, 6.0]]))
    assert [v.case for v in bad] == [VIOLATION, VIOLATION]
    # a value above the impulse value has a negative gap
    worse = classify_points(m, f, lambda X: V(X) + 100.0 * as2(X)[:, 1],
                            np.array([[5.0, 2.0]]))
    assert worse[0].case == VIOLATION and worse[0].impulse_gap < 0


def test_grid_field_generators_match_closed_form():
    m, f, V = setup(EXPENSIVE)
    g = Grid.over(m.bounds, (81, 81))
    F = ValueField.from_function(g, V)
    X = np.array([[3.0, 2.0], [6.0, 1.5], [2.0, 5.0]])
    est, hs = forward_generators(F, f, m, X, gen_tol=5e-2)
    assert np.all(hs > 0)
    assert np.nanmax(np.abs(est)) <= 5e-2


def test_no_impulse_identity_along_waiting_trajectory():
    m, f, V = setup(EXPENSIVE)
    for t in (0.0, 0.5, 3.0):
        assert check_no_impulse_identity(m, f, V, np.array([5.0, 2.0]), t) <= 1e-8


def test_h_profile_of_a_value_function():
    m, f, V = setup(SUPER)
    assert check_h_monotone(m, f, V, np.array([4.0, 3.0]), INFINITY)
    # V never exceeds the cost of waiting then acting; at the impulse time h is minus the gap
    x = np.array([10.0, 1.0])
    s, h = h_profile(m, f, V, x, 2.0)
    assert s[0] == 0.0 and s[-1] == 2.0 and np.all(h <= 1e-9)
    gap = impulse_gaps(m, V, advance(f, x, 2.0)[None])[0]
    assert gap > 0 and h[-1] == pytest.approx(-gap, abs=1e-12)


def test_sampled_conditions_hold_for_closed_form():
    m, f, V = setup(CHEAP)
    rep = check_conditions(m, f, V, n_traj=5, seed=3)
    assert rep.ok and rep.c8_total == 5 * 41
    assert rep.as_dict()["ok"] is True


def test_verdicts_csv_layout(tmp_path):
    m, f, V = setup(SUPER)
    verdicts = classify_points(m, f, V, np.array([[10.0, 1.0], [4.0, 3.0]]))
    assert [v.case for v in verdicts] == [CASE_B, CASE_A]
    path = tmp_path / "v.csv"
    write_verdicts(path, verdicts)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x1", "x2", "case", "forward_residual", "impulse_gap"]
    assert rows[1][:3] == ["10", "1", "B"] and float(rows[2][4]) == pytest.approx(11.0)


def test_default_margins():
    d = DifEqMargins()
    assert (d.forward, d.gap, d.backward, d.exclusion_cells) == (1e-3, 1e-6, 1e-3, 2)
