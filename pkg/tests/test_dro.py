import math

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardening.decision import HardeningDecision
from hardening.dro import (
    AmbiguitySet, DecisionEvaluator, DirichletPosterior, LearnerOptions, RegretTrace, ambiguity_radius,
    bayes_update, confidence_level, dynamic_regret, exact_dro_reference, init_learner, inner_step,
    outer_minimize, project_ambiguity, project_simplex, regret_bound, run_learner, worst_case,
)
from hardening.network import builtin_network
from hardening.outage import build_scenario_catalog, default_truth, synth_generate
from hardening.pipeline import truth_distribution
from hardening.restoration import CostOracle

from conftest import TableCost, two_segment_net
from qp_oracles import brute_qp, cvx_qp, kkt_residual, sort_simplex

SQRT2 = math.sqrt(2.0)


@pytest.mark.parametrize("n", [3, 5])
def test_projection_matches_brute_force_qp(rng, n):
    for _ in range(500):
        c = rng.dirichlet(np.ones(n))
        q = c + rng.normal(scale=0.2, size=n)
        r = float(rng.choice([0.02, 0.05, 0.1, 0.3]))
        p = project_ambiguity(q, c, r)
        assert np.allclose(p, brute_qp(q, c, r), atol=1e-6)
        assert p.min() >= -1e-12 and abs(p.sum() - 1) < 1e-9 and np.linalg.norm(p - c) <= r + 1e-8
        assert kkt_residual(q, c, r, p) < 1e-8


def test_projection_matches_cvx_qp_twenty_dims(rng):
    for _ in range(60):
        c = rng.dirichlet(np.ones(20))
        q = c + rng.normal(scale=0.1, size=20)
        r = 0.05
        ref = cvx_qp(q, c, r)
        p = project_ambiguity(q, c, r)
        assert ref is not None and np.allclose(p, ref, atol=1e-6)
        assert kkt_residual(q, c, r, p) < 1e-8


def test_projection_fixed_points(rng):
    c = np.full(4, 0.25)
    assert np.allclose(project_ambiguity(c, c, 0.1), c)
    inside = np.array([0.3, 0.25, 0.25, 0.2])
    assert np.allclose(project_ambiguity(inside, c, 0.1), inside)
    assert np.allclose(project_ambiguity(rng.random(4), c, 0.0), c)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=12))
def test_large_radius_is_plain_simplex_projection(y):
    y = np.array(y)
    c = np.full(len(y), 1.0 / len(y))
    assert np.allclose(project_ambiguity(y, c, SQRT2 + 1e-9), sort_simplex(y), atol=1e-9)
    assert np.allclose(project_simplex(y), sort_simplex(y), atol=1e-9)


def test_inner_step_examples():
    p = np.full(3, 1 / 3)
    amb = AmbiguitySet(p, 2.0)
    # pre-projection (0.4333, 1/3, 1/3); the simplex projection shifts all by 0.1/3
    assert np.allclose(inner_step(p, np.array([10.0, 0, 0]), amb, eta=0.01), [0.4, 0.3, 0.3])
    c = np.full(4, 0.25)
    q = np.array([0.45, 0.25, 0.20, 0.10])
    out = inner_step(c, (q - c) / 0.05, AmbiguitySet(c, 0.1), eta=0.05)
    assert np.allclose(out, cvx_qp(q, c, 0.1), atol=1e-6)


def test_inner_step_does_not_lower_expectation_from_interior(rng):
    for _ in range(200):
        c = rng.dirichlet(np.ones(5) * 5)
        costs = rng.random(5) * 10
        p_prev = project_ambiguity(c + rng.normal(scale=0.01, size=5), c, 0.05)
        p = inner_step(p_prev, costs, AmbiguitySet(c, 0.05), eta=0.05, scale=10.0)
        if p_prev.min() > 0 and np.linalg.norm(p_prev - c) < 0.05:
            assert costs @ p >= costs @ p_prev - 1e-12


# ---------------------------------------------------------------- posterior and radius

def test_dirichlet_examples():
    post = bayes_update(DirichletPosterior(np.ones(4)), np.array([0.7, 0.1, 0.1, 0.1]))
    assert np.allclose(post.counts, [1.7, 1.1, 1.1, 1.1])
    assert np.allclose(post.mean(), [0.34, 0.22, 0.22, 0.22])
    assert np.allclose(DirichletPosterior(np.array([3.0, 1, 1, 1])).mean(), [0.5, 1 / 6, 1 / 6, 1 / 6])
    e1 = np.eye(4)[0]
    post = DirichletPosterior.uniform(4)
    for _ in range(1000):
        post = bayes_update(post, e1)
    assert post.mean()[0] > 0.99
    uni = bayes_update(DirichletPosterior(np.array([5.0, 1, 1, 1])), np.full(4, 0.25))
    assert np.abs(uni.mean() - 0.25).max() < np.abs(np.array([5.0, 1, 1, 1]) / 8 - 0.25).max()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=10))
def test_update_adds_exactly_one(w):
    w = np.array(w)
    if w.sum() <= 0:
        return
    o = w / w.sum()
    post = DirichletPosterior(np.arange(1.0, len(o) + 1))
    o = o / math.fsum(o)
    new = bayes_update(post, o)
    assert new.total == pytest.approx(post.total + 1.0, abs=1e-12)
    assert new.mean().sum() == pytest.approx(1.0)


def test_update_rejects_non_distributions():
    post = DirichletPosterior.uniform(3)
    with pytest.raises(ValueError):
        bayes_update(post, np.array([0.5, 0.5, 0.5]))
    with pytest.raises(ValueError):
        bayes_update(post, np.array([1.2, -0.2, 0.0]))
    with pytest.raises(ValueError):
        bayes_update(post, np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        DirichletPosterior(np.array([1.0, -1.0]))


def test_radius_examples():
    assert confidence_level(1, 0.05) == pytest.approx(0.030396, abs=1e-6)
    assert ambiguity_radius(1, 5, 0.05) == pytest.approx(6.471, abs=1e-3)
    assert confidence_level(100, 0.05) == pytest.approx(3.0396e-6, rel=1e-4)
    assert ambiguity_radius(100, 5, 0.05) == pytest.approx(1.157, abs=1e-3)
    ratio = ambiguity_radius(400, 5, 0.05) / ambiguity_radius(100, 5, 0.05)
    assert 0.5 < ratio < 0.6
    with pytest.raises(ValueError):
        ambiguity_radius(0, 5, 0.05)


def test_radius_monotone_to_zero():
    d = np.array([ambiguity_radius(t, 10, 0.05) for t in range(2, 100_001)])
    assert np.all(np.diff(d) <= 0)
    assert d[-1] < 0.1


def test_init_learner_centers():
    net = two_segment_net()
    cat = build_scenario_catalog(net)
    ev = DecisionEvaluator(net, cat, TableCost(net, [10, 4]), 3.0)
    st0 = init_learner(cat, ev, LearnerOptions(budget=3.0))
    assert np.allclose(st0.p, 0.5) and st0.B == 10.0
    st1 = init_learner(cat, ev, LearnerOptions(budget=3.0), prior_counts=np.array([3.0, 1.0]))
    assert np.allclose(st1.posterior.mean(), [0.75, 0.25])
    assert st0.h.is_feasible(net, 3.0)


# ---------------------------------------------------------------- worst case and decisions

def test_worst_case_matches_dense_grid(rng):
    c = np.array([0.5, 0.3, 0.2])
    grid = np.linspace(0, 1, 401)
    a, b = np.meshgrid(grid, grid)
    P = np.column_stack([a.ravel(), b.ravel(), 1 - a.ravel() - b.ravel()])
    P = P[(P[:, 2] >= 0) & (np.linalg.norm(P - c, axis=1) <= 0.15)]
    G = rng.random((20, 3)) * 10
    vals, maxi = worst_case(G, c, 0.15)
    grid_best = (G @ P.T).max(axis=1)
    assert np.all(vals >= grid_best - 1e-9)
    assert np.all(vals - grid_best < 0.05)
    assert np.all(np.linalg.norm(maxi - c, axis=1) <= 0.15 + 1e-8)


def test_worst_case_six_scenarios_two_decisions():
    c = np.array([0.3, 0.2, 0.2, 0.1, 0.1, 0.1])
    G = np.array([[5.0, 1, 0, 8, 2, 3], [2.0, 2, 2, 2, 9, 1]])
    vals, _ = worst_case(G, c, 0.2)
    for g, v in zip(G, vals):
        p = cp.Variable(6)
        cp.Problem(cp.Maximize(g @ p), [p >= 0, cp.sum(p) == 1, cp.norm(p - c) <= 0.2]).solve()
        assert v == pytest.approx(g @ p.value, abs=1e-5)


def test_worst_case_degenerate_radii(rng):
    G = rng.random((10, 5))
    c = rng.dirichlet(np.ones(5))
    assert np.allclose(worst_case(G, c, 0.0)[0], G @ c)
    assert np.allclose(worst_case(G, c, SQRT2 + 1e-6)[0], G.max(axis=1))


def test_outer_minimize_examples():
    net = two_segment_net()
    cat = build_scenario_catalog(net)
    ev = DecisionEvaluator(net, cat, TableCost(net, [10, 4]), 3.0)
    h, val = outer_minimize(np.array([0.3, 0.7]), ev)
    # harden-1: 0.7 * 4 = 2.8, harden-2: 0.3 * 10 = 3.0
    assert h.codes == (2, 0) and val == pytest.approx(2.8)
    ev0 = DecisionEvaluator(net, cat, TableCost(net, [10, 4]), 0.0)
    assert outer_minimize(np.array([0.3, 0.7]), ev0)[0] == HardeningDecision.none(net)


@pytest.mark.parametrize("name", ["twofeeder", "ieee13"])
def test_greedy_agrees_with_enumeration(name, rng):
    net = builtin_network(name)
    cat = build_scenario_catalog(net)
    table = rng.random(len(cat)) * 100

    def cost_fn(h, s):
        return 0.0 if h.codes[s] in (2, 3) else float(table[s]) * (0.8 if h.codes[s] == 1 else 1.0)

    budget = 0.5 if name == "ieee13" else 2.0
    full = DecisionEvaluator(net, cat, cost_fn, budget)
    greedy = DecisionEvaluator(net, cat, cost_fn, budget, enum_cap=0)
    assert full.enumerable and not greedy.enumerable
    same, trials = 0, 50
    for _ in range(trials):
        p = rng.dirichlet(np.ones(len(cat)))
        _, a = outer_minimize(p, full)
        _, b = outer_minimize(p, greedy)
        assert b >= a - 1e-9
        same += abs(a - b) <= 1e-9 * max(1.0, a)
    assert same >= 0.9 * trials


def test_exact_reference_degenerates_to_sp_and_ro():
    net = builtin_network("twofeeder")
    cat = build_scenario_catalog(net)
    oracle = CostOracle(net, cat)
    ev = DecisionEvaluator(net, cat, oracle, 2.0)
    G = ev.matrix()
    c = np.linspace(1, 2, len(cat))
    c /= c.sum()
    _, sp, _ = exact_dro_reference(AmbiguitySet(c, 0.0), ev)
    _, ro, _ = exact_dro_reference(AmbiguitySet(c, SQRT2 + 1e-6), ev)
    assert sp == pytest.approx((G @ c).min())
    assert ro == pytest.approx(G.max(axis=1).min())


# ---------------------------------------------------------------- regret and learner

def test_regret_bound_leading_term():
    full = regret_bound(100.0, 4.0, 400, 5, 0.05)
    rest = regret_bound(100.0, 0.0, 400, 5, 0.05)
    assert full - rest == pytest.approx(10.0)


def test_dynamic_regret_zero_and_recomputed():
    tr = RegretTrace(learner_cost=[5.0, 4.0], reference_cost=[5.0, 4.0], epsilon=[0.0, 0.0], B=5, n_scenarios=2)
    assert dynamic_regret(tr)[0] == 0.0
    tr = RegretTrace(learner_cost=[5.0, 4.5, 4.0], reference_cost=[4.0, 4.0, 4.0], epsilon=[0.1, 0.2, 0.0],
                     B=5, n_scenarios=2)
    assert dynamic_regret(tr)[0] == pytest.approx((1.1 + 0.7 + 0.0) / 3)
    assert np.sum(tr.terms()) + np.sum(tr.epsilon) == pytest.approx(dynamic_regret(tr)[0] * 3)


@pytest.fixture(scope="module")
def small_world():
    net = builtin_network("twofeeder")
    cat0 = build_scenario_catalog(net)
    truth = default_truth(cat0, 0)
    records = synth_generate(truth, cat0, 600, seed=3)
    cat = build_scenario_catalog(net, records)
    oracle = CostOracle(net, cat)
    return net, cat, records, oracle, truth_distribution(truth, cat, net)


def _label_ev(net, cat, oracle, budget):
    return DecisionEvaluator(net, cat, oracle, budget, translation="label_rule")


def test_learner_single_step_bookkeeping(small_world):
    net, cat, records, oracle, tp = small_world
    ev = _label_ev(net, cat, oracle, 1.0)
    opts = LearnerOptions(T=1, budget=1.0)
    state = init_learner(cat, ev, opts)
    h, trace, history = run_learner(1, ev, records, opts, truth_probs=tp, state=state)
    assert state.t == 1 and len(history) == 1 and trace.T == 1
    assert state.posterior.total == pytest.approx(len(cat) + 1)
    assert h.is_feasible(net, 1.0)


def test_learner_iterates_stay_in_ambiguity_sets(small_world):
    net, cat, records, oracle, tp = small_world
    ev = _label_ev(net, cat, oracle, 1.0)
    opts = LearnerOptions(T=150, budget=1.0)
    seen = []

    def check(state, row):
        assert row["d_t"] == pytest.approx(ambiguity_radius(row["t"], len(cat), opts.delta))
        seen.append(state.p.copy())

    state = init_learner(cat, ev, opts)
    centers = []
    prev = {"post": state.posterior.mean()}

    def track(state, row):
        centers.append(prev["post"])
        prev["post"] = state.posterior.mean()
        check(state, row)

    run_learner(150, ev, records, opts, truth_probs=tp, state=state, on_step=track)
    for t, (p, c) in enumerate(zip(seen, centers), start=1):
        assert p.min() >= -1e-9 and abs(p.sum() - 1) < 1e-9
        assert np.linalg.norm(p - c) <= ambiguity_radius(t, len(cat), opts.delta) + 1e-8


def test_learner_is_deterministic(small_world):
    net, cat, records, oracle, tp = small_world
    ev = _label_ev(net, cat, oracle, 1.0)
    opts = LearnerOptions(T=100, budget=1.0, seed=4)
    a = run_learner(100, ev, records, opts, truth_probs=tp)
    b = run_learner(100, ev, records, opts, truth_probs=tp)
    assert a[0] == b[0] and a[2] == b[2]


def test_learner_path_length_and_regret_accounting(small_world):
    net, cat, records, oracle, tp = small_world
    ev = _label_ev(net, cat, oracle, 1.0)
    opts = LearnerOptions(T=200, budget=1.0)
    h, trace, history = run_learner(200, ev, records, opts, truth_probs=tp)
    d_t, bound = dynamic_regret(trace)
    assert d_t <= bound
    assert all(r["regret_term"] >= -1e-9 for r in history)
    assert sum(r["regret_term"] + r["epsilon_t"] for r in history) / 200 == pytest.approx(d_t)


def test_learner_final_objective_stable_across_seeds(small_world):
    net, cat, records, oracle, tp = small_world
    ev = _label_ev(net, cat, oracle, 1.0)
    finals = []
    for seed in range(50):
        opts = LearnerOptions(T=300, budget=1.0, seed=seed, regret_reference="none")
        order = np.random.default_rng(seed).permutation(len(records))[:300]
        _, _, history = run_learner(300, ev, [records[i] for i in order], opts, truth_probs=tp)
        finals.append(history[-1]["worst_case_cost"])
    finals = np.array(finals)
    assert finals.std() / finals.mean() < 0.15


def test_stream_exhaustion_and_missing_truth(small_world):
    net, cat, records, oracle, _ = small_world
    ev = _label_ev(net, cat, oracle, 1.0)
    opts = LearnerOptions(T=10, budget=1.0)
    _, trace, history = run_learner(10, ev, records[:4], opts)
    assert trace.stream_exhausted and len(history) == 4
    assert trace.residual_unknown and all(r["epsilon_t"] == 0.0 for r in history)
