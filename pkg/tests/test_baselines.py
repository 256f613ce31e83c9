import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardening.baselines import REPORT_HEADER, compare_trials, solve_dro_static, solve_ro, solve_sp
from hardening.decision import HardeningDecision, InfeasibleBudget
from hardening.dro import DecisionEvaluator, worst_case
from hardening.network import builtin_network
from hardening.outage import build_scenario_catalog
from hardening.restoration import CostOracle

from conftest import FIXTURES, TableCost, two_segment_net

SQRT2 = math.sqrt(2.0)


def _table_ev(table, budget=3.0):
    net = two_segment_net()
    return DecisionEvaluator(net, build_scenario_catalog(net), TableCost(net, table), budget)


def test_ro_two_segment_example():
    h, val = solve_ro(_table_ev([10, 4]))
    assert h.codes == (2, 0) and val == pytest.approx(4.0)


def test_sp_two_segment_example():
    h, val = solve_sp(_table_ev([10, 4]), np.array([0.3, 0.7]))
    assert h.codes == (2, 0) and val == pytest.approx(2.8)
    h1, _ = solve_sp(_table_ev([10, 4]), np.array([1.0, 0.0]))
    assert h1.codes[0] == 2


def test_sp_symmetric_tie_goes_to_smallest_code_vector():
    h, val = solve_sp(_table_ev([5, 5]), np.array([0.5, 0.5]))
    assert val == pytest.approx(2.5) and h.codes == (0, 2)


def test_budget_zero_and_full_budget():
    net = builtin_network("chain3")
    cat = build_scenario_catalog(net)
    oracle = CostOracle(net, cat)
    ev0 = DecisionEvaluator(net, cat, oracle, 0.0)
    h, val = solve_ro(ev0)
    assert h == HardeningDecision.none(net)
    assert val == pytest.approx(max(oracle(h, s) for s in range(len(cat))))
    ev = DecisionEvaluator(net, cat, oracle, 10.0)
    h, val = solve_ro(ev)
    assert all(oracle.unserved(h, s) == pytest.approx(0.0, abs=1e-9) for s in range(len(cat)))
    assert val == pytest.approx(max(oracle.parts(h, s)[1] for s in range(len(cat))))


def test_errors():
    with pytest.raises(InfeasibleBudget):
        solve_ro(_table_ev([10, 4], budget=-1.0))
    with pytest.raises(ValueError):
        solve_sp(_table_ev([10, 4]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        solve_dro_static(_table_ev([10, 4]), np.array([0.5, 0.5]), -0.1)


@pytest.fixture(scope="module")
def fixture_evaluators():
    out = {}
    for name in FIXTURES:
        net = builtin_network(name)
        cat = build_scenario_catalog(net)
        budget = 0.5 if name == "ieee13" else 2.0
        out[name] = DecisionEvaluator(net, cat, CostOracle(net, cat), budget)
    return out


@pytest.mark.parametrize("name", FIXTURES)
def test_static_dro_degenerates(name, fixture_evaluators):
    ev = fixture_evaluators[name]
    c = np.linspace(1.0, 3.0, ev.n_s)
    c /= c.sum()
    _, sp = solve_sp(ev, c)
    _, ro = solve_ro(ev)
    _, d0 = solve_dro_static(ev, c, 0.0)
    _, dfull = solve_dro_static(ev, c, SQRT2)
    _, dmid = solve_dro_static(ev, c, 0.1)
    assert d0 == pytest.approx(sp, rel=1e-12)
    assert dfull == pytest.approx(ro, rel=1e-9)
    assert sp - 1e-9 <= dmid <= ro + 1e-9


@pytest.mark.parametrize("name", FIXTURES)
def test_strategies_share_the_cost_oracle(name, fixture_evaluators):
    ev = fixture_evaluators[name]
    c = np.full(ev.n_s, 1.0 / ev.n_s)
    for h, val in (solve_ro(ev), solve_sp(ev, c), solve_dro_static(ev, c, 0.1)):
        g = np.array([ev.cost_fn(h, s) for s in range(ev.n_s)])
        assert h.is_feasible(ev.network, ev.budget)
        assert val in (pytest.approx(g.max()), pytest.approx(g @ c), pytest.approx(worst_case(g, c, 0.1)[0][0]))


def _uniform(h):
    return np.full(3, 1 / 3)


def test_trial_report_single_draw_equals_cost():
    net = two_segment_net()
    h = HardeningDecision.none(net)
    cost = {0: 7.0, 1: 3.0, 2: 1.0}
    rep = compare_trials({"a": h}, lambda h, s: cost[s], _uniform, n_trials=1, n_scen=1, seed=9)
    mean, lo, hi = rep.bounds("a")
    assert mean == lo == hi and mean in cost.values()


def test_identical_strategies_identical_reports():
    net = two_segment_net()
    h = HardeningDecision.none(net)
    rep = compare_trials({"a": h, "b": h}, lambda h, s: float(s), _uniform, 20, 10, seed=1)
    assert rep.per_trial["a"] == rep.per_trial["b"]
    again = compare_trials({"a": h}, lambda h, s: float(s), _uniform, 20, 10, seed=1)
    assert again.per_trial["a"] == rep.per_trial["a"]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000), st.sampled_from([None, 5.0, 25.0]))
def test_report_bounds_bracket_trials(n_trials, n_scen, seed, pct):
    net = two_segment_net()
    h = HardeningDecision.none(net)
    rep = compare_trials({"x": h}, lambda h, s: [4.0, 9.0, 0.5][s], _uniform, n_trials, n_scen, seed, pct)
    mean, lo, hi = rep.bounds("x")
    v = np.array(rep.per_trial["x"])
    assert lo <= hi
    if pct is None:
        # min/max bounds bracket the mean; percentile bands need not
        assert lo - 1e-12 <= mean <= hi + 1e-12
        assert lo <= v.min() + 1e-12 and hi >= v.max() - 1e-12
    else:
        assert np.isclose(lo, np.percentile(v, pct)) and np.isclose(hi, np.percentile(v, 100 - pct))
    assert rep.to_csv().splitlines()[0] == ",".join(REPORT_HEADER)


def test_trial_arguments_validated():
    with pytest.raises(ValueError):
        compare_trials({}, lambda h, s: 0.0, _uniform, 0, 5)
