import json

import pytest

from hardening.decision import HardeningDecision
from hardening.network import S_BASE_KW, builtin_network, network_from_dict, validate_radiality
from hardening.outage import build_scenario_catalog
from hardening.restoration import (
    CostOracle, RestorationOptions, RestorationProblem, brute_force_oracle, cost, effective_alpha,
    effective_faults, solve_restoration, with_options,
)

from conftest import FIXTURES, fixture_doc

TIER2 = RestorationOptions(tier=2)


def _scenario(net, seg_id, catalog=None):
    return next(s for s in catalog or build_scenario_catalog(net) if s.name == seg_id)


def _solve(net, seg_id, decision=None, options=None):
    return solve_restoration(RestorationProblem(net, _scenario(net, seg_id), decision,
                                                options or RestorationOptions()))


def _unfaulted(net):
    sc = build_scenario_catalog(net)[0]
    return type(sc)(index=0, name="none", fault_components=frozenset(), duration_h=2.0, clear_device="")


@pytest.fixture(scope="module")
def chain3():
    return builtin_network("chain3")


def test_chain_tail_fault_sheds_tail_load(chain3):
    sol = _solve(chain3, "bus:B")
    assert sol.f1 == pytest.approx(10.0)
    assert sol.beta["B"] == 0 and sol.beta["A"] == 1


def test_chain_head_fault_sheds_everything(chain3):
    # 15 kW over 2 h
    assert _solve(chain3, "seg:L1").f1 == pytest.approx(30.0)


@pytest.mark.parametrize("name", FIXTURES)
def test_no_fault_serves_all_load(name):
    net = builtin_network(name)
    sol = solve_restoration(RestorationProblem(net, _unfaulted(net)))
    assert sol.f1 == pytest.approx(0.0, abs=1e-7)
    assert all(b == 1 for n, b in sol.beta.items() if net.nodes[n].p_max.sum() > 0)


def test_zero_load_network_costs_nothing():
    doc = fixture_doc("twofeeder")
    for n in doc["nodes"]:
        if "p_max" in n:
            n["p_max"] = [0.0] * len(n["p_max"])
            n["q_max"] = [0.0] * len(n["q_max"])
    net = network_from_dict(doc)
    for sc in build_scenario_catalog(net):
        sol = solve_restoration(RestorationProblem(net, sc))
        assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_faulted_zone_load_is_lost_and_rest_restored(ieee13):
    sc = _scenario(ieee13, "seg:L08")
    seg = next(s for s in ieee13.segments if s.id == "seg:L08")
    own = sum(ieee13.nodes[n].weight * ieee13.nodes[n].p_max.sum() for n in seg.member_nodes)
    sol = _solve(ieee13, "seg:L08")
    assert sol.f1 == pytest.approx(own * sc.duration_h, abs=1e-6)
    assert sol.f1 == pytest.approx(brute_force_oracle(RestorationProblem(ieee13, sc))[1], abs=1e-6)


def test_cost_of_hardening_examples(chain3):
    sc = _scenario(chain3, "bus:B")
    none = HardeningDecision.none(chain3)
    ud = HardeningDecision.from_dict(chain3, {"bus:B": "ud"})
    pl = HardeningDecision.from_dict(chain3, {"bus:B": "pl"})
    base = cost(none, sc, chain3)
    assert base > 10.0 and base - 10.0 < 0.01
    hard = solve_restoration(RestorationProblem(chain3, sc, ud))
    assert hard.f1 == pytest.approx(0.0, abs=1e-9) and hard.objective == pytest.approx(hard.f2)
    assert cost(pl, sc, chain3) == pytest.approx(base)


def test_effective_faults_by_measure(ieee13):
    sc = _scenario(ieee13, "seg:L08")
    for measure, survives in (("pl", False), ("ud", True)):
        h = HardeningDecision.from_dict(ieee13, {"seg:L08": measure})
        assert (effective_faults(sc, h, ieee13) == frozenset()) is survives
        assert effective_alpha(sc, h, ieee13)["seg:L08"] == int(survives)
    xsc = _scenario(ieee13, "xfmr:611")
    pd = HardeningDecision.from_dict(ieee13, {"xfmr:611": "pd"})
    assert effective_faults(xsc, pd, ieee13) == frozenset()
    # probability-only reading keeps the fault
    ud = HardeningDecision.from_dict(ieee13, {"seg:L08": "ud"})
    assert effective_faults(sc, ud, ieee13, "probability_only") == sc.fault_components


@pytest.mark.parametrize("name", FIXTURES)
@pytest.mark.parametrize("tier", (1, 2))
def test_solutions_are_radial(name, tier):
    net = builtin_network(name)
    for sc in build_scenario_catalog(net):
        sol = solve_restoration(RestorationProblem(net, sc, options=RestorationOptions(tier=tier)))
        assert validate_radiality(net, set(sol.closed))


@pytest.mark.parametrize("name", FIXTURES)
def test_solver_matches_enumeration_oracle(name):
    net = builtin_network(name)
    for sc in build_scenario_catalog(net):
        problem = RestorationProblem(net, sc)
        sol = solve_restoration(problem)
        obj, f1, f2, closed = brute_force_oracle(problem)
        assert sol.f1 == pytest.approx(f1, abs=1e-6)
        assert sol.objective == pytest.approx(obj, rel=1e-6, abs=1e-6)
        assert sol.closed == closed


def test_removing_a_tie_never_lowers_unserved_load(ieee13):
    doc = fixture_doc("ieee13")
    for tie in ("L13", "L14"):
        cut = dict(doc, lines=[l for l in doc["lines"] if l["id"] != tie])
        reduced = network_from_dict(cut)
        cat_full, cat_cut = build_scenario_catalog(ieee13), build_scenario_catalog(reduced)
        for a, b in zip(cat_full, cat_cut):
            assert a.name == b.name
            full = solve_restoration(RestorationProblem(ieee13, a)).f1
            less = solve_restoration(RestorationProblem(reduced, b)).f1
            assert less >= full - 1e-6


def test_big_m_doubling_keeps_objective(ieee13):
    cat = build_scenario_catalog(ieee13)
    base = RestorationOptions()
    loose = with_options(base, big_m_flow=2 * 20.0, big_m_volt=2 * 2.0)
    tight = with_options(base, big_m_flow=20.0, big_m_volt=2.0)
    for sc in cat:
        a = solve_restoration(RestorationProblem(ieee13, sc, options=tight)).objective
        b = solve_restoration(RestorationProblem(ieee13, sc, options=loose)).objective
        assert abs(a - b) < 1e-6


@pytest.mark.parametrize("name", FIXTURES)
def test_tier2_cone_residual(name):
    net = builtin_network(name)
    for sc in build_scenario_catalog(net):
        sol = solve_restoration(RestorationProblem(net, sc, options=TIER2))
        for lid, line in net.lines.items():
            if lid not in sol.I:
                continue
            for ph in range(3):
                p, q = sol.P_kw[lid][ph] / S_BASE_KW, sol.Q_kw[lid][ph] / S_BASE_KW
                resid = sol.I[lid][ph] * sol.V[line.from_node][ph] - (p * p + q * q)
                assert resid >= -1e-4, (sc.name, lid, ph, resid)


@pytest.mark.parametrize("name", FIXTURES)
def test_tier2_unserved_load_matches_tier1(name):
    net = builtin_network(name)
    for sc in build_scenario_catalog(net):
        a = solve_restoration(RestorationProblem(net, sc)).f1
        b = solve_restoration(RestorationProblem(net, sc, options=TIER2)).f1
        assert a == pytest.approx(b, abs=1e-6)


def test_cost_oracle_memoizes_on_effective_faults(ieee13):
    cat = build_scenario_catalog(ieee13)
    oracle = CostOracle(ieee13, cat)
    s = next(i for i, sc in enumerate(cat) if sc.name == "seg:L08")
    none = HardeningDecision.none(ieee13)
    other = HardeningDecision.from_dict(ieee13, {"seg:L04": "ud"})
    a = oracle(none, s)
    b = oracle(other, s)
    assert a == b and oracle.solves == 1
    assert oracle.vector(none).shape == (len(cat),)
    assert oracle.unserved(none, s) == pytest.approx(oracle.parts(none, s)[0])


def test_solution_dump_roundtrip(tmp_path, chain3):
    sol = _solve(chain3, "bus:B")
    sol.dump(tmp_path / "sol.json")
    doc = json.loads((tmp_path / "sol.json").read_text())
    assert doc["f1"] == pytest.approx(sol.f1)
    assert set(doc) >= {"closed", "beta", "P_kw", "V", "gamma"}


def test_bad_options_rejected():
    with pytest.raises(ValueError):
        RestorationOptions(tier=3)
    with pytest.raises(ValueError):
        RestorationOptions(harden_semantics="other")
    with pytest.raises(ValueError):
        RestorationOptions.from_dict({"gap": 1})
