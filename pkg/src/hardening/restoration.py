"""Per-scenario restoration model: fault isolation, reconfiguration, load shedding and DistFlow.

The cost of a scenario under a hardening decision is the weighted unserved
energy plus network losses of the best radial restoration.
"""
from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .decision import PADMOUNT, UNDERGROUND, HardeningDecision
from .milp import MILP, Infeasible, SolverError, branch_and_bound
from .network import PHASES, S_BASE_KW, Network, _energize, validate_radiality
from .outage import Scenario

SEMANTICS = ("immunity", "probability_only")
TIE_TOL = 1e-6
ORACLE_MAX_FREE_SWITCHES = 12


class RestorationError(RuntimeError):
    pass


@dataclass
class RestorationOptions:
    tier: int = 1
    mip_gap: float = 1e-6
    big_m_flow: float | None = None
    big_m_volt: float | None = None
    max_cone_cuts: int = 30
    cone_tol: float = 1e-4
    time_limit_s: float | None = 60.0
    node_limit: int = 20000
    harden_semantics: str = "immunity"
    v_min: float = 0.95
    v_max: float = 1.05
    v_source: float = 1.0

    def __post_init__(self):
        if self.tier not in (1, 2):
            raise ValueError("tier must be 1 or 2")
        if self.harden_semantics not in SEMANTICS:
            raise ValueError(f"harden_semantics must be one of {SEMANTICS}")
        if not 0 < self.v_min <= self.v_source <= self.v_max:
            raise ValueError("need 0 < v_min <= v_source <= v_max")

    @classmethod
    def from_dict(cls, doc: dict) -> "RestorationOptions":
        known = cls.__dataclass_fields__
        unknown = set(doc) - set(known)
        if unknown:
            raise ValueError(f"unknown solver options {sorted(unknown)}")
        return cls(**doc)

    def key(self) -> tuple:
        return tuple(getattr(self, f) for f in self.__dataclass_fields__)


@dataclass(frozen=True)
class RestorationProblem:
    network: Network
    scenario: Scenario
    decision: HardeningDecision | None = None
    options: RestorationOptions = field(default_factory=RestorationOptions)

    def faults(self) -> frozenset:
        return effective_faults(self.scenario, self.decision, self.network, self.options.harden_semantics)


@dataclass
class RestorationSolution:
    objective: float
    f1: float
    f2: float
    closed: tuple
    gamma: dict
    owner: dict
    beta: dict
    p_kw: dict
    q_kw: dict
    sigma_kw: dict
    P_kw: dict
    Q_kw: dict
    V: dict
    I: dict = field(default_factory=dict)
    commodity: dict = field(default_factory=dict)
    slack_v: dict = field(default_factory=dict)
    nodes: int = 0
    cone_rounds: int = 0
    max_cone_violation: float = 0.0

    def to_dict(self) -> dict:
        def arr(d):
            return {k: np.asarray(v).tolist() for k, v in d.items()}

        return {
            "objective": self.objective, "f1": self.f1, "f2": self.f2,
            "closed": list(self.closed), "gamma": self.gamma, "owner": self.owner, "beta": self.beta,
            "p_kw": arr(self.p_kw), "q_kw": arr(self.q_kw), "sigma_kw": arr(self.sigma_kw),
            "P_kw": arr(self.P_kw), "Q_kw": arr(self.Q_kw), "V": arr(self.V), "I": arr(self.I),
            "commodity": self.commodity, "slack_v": arr(self.slack_v),
            "nodes": self.nodes, "cone_rounds": self.cone_rounds,
            "max_cone_violation": self.max_cone_violation,
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def effective_faults(scenario: Scenario, decision: HardeningDecision | None, network: Network,
                     semantics: str = "immunity") -> frozenset:
    """Faulted components after hardening; ud and pd make a component survive, pl does not."""
    if decision is None or semantics == "probability_only":
        return frozenset(scenario.fault_components)
    immune = {seg.id for seg, c in zip(network.segments, decision.codes) if c in (UNDERGROUND, PADMOUNT)}
    return frozenset(scenario.fault_components) - immune


def effective_alpha(scenario: Scenario, decision, network: Network, semantics: str = "immunity") -> dict:
    faults = effective_faults(scenario, decision, network, semantics)
    return {seg.id: 0 if seg.id in faults else 1 for seg in network.segments}


def _fault_effects(network: Network, faults: frozenset):
    """Switches forced open, nodes forced dead and loads forced off by a fault set."""
    forced_open, dead, tripped = set(), set(), set()
    for seg in network.segments:
        if seg.id not in faults:
            continue
        if seg.kind == "feeder":
            forced_open |= seg.boundary_devices
            dead |= seg.member_nodes
        else:
            tripped |= seg.member_nodes
    return forced_open, dead, tripped


def _phases(network: Network, line) -> list[int]:
    a, b = network.nodes[line.from_node].phases, network.nodes[line.to_node].phases
    return [PHASES.index(p) for p in PHASES if p in a and p in b]


def _q_ratio(node) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(node.p_max > 0, node.q_max / np.where(node.p_max > 0, node.p_max, 1.0), 0.0)


class _Builder:
    def __init__(self):
        self.lb, self.ub, self.integer, self.c = [], [], [], []
        self.index = {}
        self.ub_rows, self.eq_rows = [], []

    def var(self, key, lb, ub, integer=False, cost=0.0) -> int:
        j = len(self.lb)
        self.index[key] = j
        self.lb.append(lb)
        self.ub.append(ub)
        self.integer.append(integer)
        self.c.append(cost)
        return j

    def le(self, terms: dict, rhs: float):
        self.ub_rows.append((terms, rhs))

    def eq(self, terms: dict, rhs: float):
        self.eq_rows.append((terms, rhs))

    @staticmethod
    def _mat(rows, n):
        if not rows:
            return None, None
        r, c, v = [], [], []
        for i, (terms, _) in enumerate(rows):
            for j, a in terms.items():
                if a != 0.0:
                    r.append(i)
                    c.append(j)
                    v.append(a)
        return sparse.csr_matrix((v, (r, c)), shape=(len(rows), n)), np.array([b for _, b in rows], dtype=float)

    def milp(self, offset: float) -> MILP:
        n = len(self.lb)
        A_ub, b_ub = self._mat(self.ub_rows, n)
        A_eq, b_eq = self._mat(self.eq_rows, n)
        return MILP(
            c=np.array(self.c, dtype=float), lb=np.array(self.lb, dtype=float), ub=np.array(self.ub, dtype=float),
            integer=np.array(self.integer, dtype=bool), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, offset=offset,
        )


def _add(terms: dict, j: int, a: float):
    terms[j] = terms.get(j, 0.0) + a


class _RestorationModel:
    """Mixed-integer restoration model for one (network, fault set, duration)."""

    def __init__(self, network: Network, faults: frozenset, duration_h: float, options: RestorationOptions):
        self.net, self.opt, self.dt = network, options, duration_h
        self.forced_open, self.dead, self.tripped = _fault_effects(network, faults)
        net = network
        b = _Builder()
        self.b = b
        total_load = sum(float(n.p_max.sum()) for n in net.nodes.values()) / S_BASE_KW
        self.m_flow = options.big_m_flow or max(2.0 * total_load, 1e-3)
        vmin, vmax = options.v_min**2, options.v_max**2
        self.m_volt = options.big_m_volt or vmax
        sources = [k for k in net.sources if k not in self.dead]
        self.sources = sources
        n_nodes = len(net.nodes)
        switches = net.switchable
        self.switches = switches

        for e in switches:
            b.var(("g", e), 0.0, 0.0 if e in self.forced_open else 1.0, integer=True)
        for i, node in net.nodes.items():
            for k in sources:
                if i in self.dead or (node.is_source and i != k):
                    lo = hi = 0.0
                elif i == k:
                    lo = hi = 1.0
                else:
                    lo, hi = 0.0, 1.0
                b.var(("u", i, k), lo, hi, integer=not lo == hi)

        offset = 0.0
        for i, node in net.nodes.items():
            if node.p_max.sum() <= 0:
                continue
            off = i in self.dead or i in self.tripped or not sources
            jb = b.var(("b", i), 0.0, 0.0 if off else 1.0, integer=True)
            b.le({jb: 1.0, **{b.index[("u", i, k)]: -1.0 for k in sources}}, 0.0)
            for ph in node.phase_idx():
                d = node.p_max[ph] / S_BASE_KW
                if d <= 0:
                    continue
                w = node.weight * duration_h * S_BASE_KW
                offset += w * d
                jp = b.var(("p", i, ph), 0.0, d, cost=-w)
                b.le({jp: 1.0, jb: -d}, 0.0)

        for k in sources:
            node = net.nodes[k]
            for ph in node.phase_idx():
                b.var(("gp", k, ph), 0.0, node.source_p_cap[ph] / S_BASE_KW)
                qc = node.source_q_cap[ph] / S_BASE_KW
                b.var(("gq", k, ph), -qc, qc)

        for lid, line in net.lines.items():
            for ph in _phases(net, line):
                b.var(("P", lid, ph), -self.m_flow, self.m_flow)
                b.var(("Q", lid, ph), -self.m_flow, self.m_flow)
                if line.switchable:
                    b.var(("s", lid, ph), -self.m_volt, self.m_volt)
                if options.tier == 2:
                    b.var(("I", lid, ph), 0.0, line.i_max**2, cost=S_BASE_KW * line.r[ph, ph])
            for k in sources:
                b.var(("f", lid, k), -n_nodes, n_nodes)
            if line.switchable:
                b.var(("w", lid), 0.0, 1.0)

        for i, node in net.nodes.items():
            for ph in node.phase_idx():
                b.var(("V", i, ph), 0.0, vmax)
        self.offset = offset
        self._constraints(vmin, vmax)

    def u_sum(self, i) -> dict:
        return {self.b.index[("u", i, k)]: 1.0 for k in self.sources}

    def _constraints(self, vmin: float, vmax: float):
        net, b, ix = self.net, self.b, self.b.index
        sources, opt = self.sources, self.opt
        n_nodes = len(net.nodes)

        for i in net.nodes:
            if sources:
                b.le(self.u_sum(i), 1.0)

        for k in sources:
            node = net.nodes[k]
            ukk = ix[("u", k, k)]
            for ph in node.phase_idx():
                b.le({ix[("gp", k, ph)]: 1.0, ukk: -node.source_p_cap[ph] / S_BASE_KW}, 0.0)
                qc = node.source_q_cap[ph] / S_BASE_KW
                b.le({ix[("gq", k, ph)]: 1.0, ukk: -qc}, 0.0)
                b.le({ix[("gq", k, ph)]: -1.0, ukk: -qc}, 0.0)
                b.eq({ix[("V", k, ph)]: 1.0, ukk: -opt.v_source**2}, 0.0)

        for lid, line in net.lines.items():
            i, j = line.from_node, line.to_node
            sw = line.switchable
            g = ix.get(("g", lid))
            for k in sources:
                ui, uj = ix[("u", i, k)], ix[("u", j, k)]
                if sw:
                    b.le({ui: 1.0, uj: -1.0, g: 1.0}, 1.0)
                    b.le({ui: -1.0, uj: 1.0, g: 1.0}, 1.0)
                else:
                    b.eq({ui: 1.0, uj: -1.0}, 0.0)
                f = ix[("f", lid, k)]
                for uu in (ui, uj):
                    b.le({f: 1.0, uu: -n_nodes}, 0.0)
                    b.le({f: -1.0, uu: -n_nodes}, 0.0)
                if sw:
                    b.le({f: 1.0, g: -n_nodes}, 0.0)
                    b.le({f: -1.0, g: -n_nodes}, 0.0)
            if sw:
                w = ix[("w", lid)]
                b.le({w: 1.0, g: -1.0}, 0.0)
                b.le({w: 1.0, **{k: -a for k, a in self.u_sum(i).items()}}, 0.0)
                t = {w: -1.0, g: 1.0}
                for kk, a in self.u_sum(i).items():
                    _add(t, kk, a)
                b.le(t, 1.0)
            phs = _phases(net, line)
            for ph in phs:
                for name in ("P", "Q"):
                    x = ix[(name, lid, ph)]
                    on = {x: 1.0}
                    for kk, a in self.u_sum(i).items():
                        _add(on, kk, -self.m_flow * a)
                    b.le(on, 0.0)
                    on = {x: -1.0}
                    for kk, a in self.u_sum(i).items():
                        _add(on, kk, -self.m_flow * a)
                    b.le(on, 0.0)
                    if sw:
                        b.le({x: 1.0, g: -self.m_flow}, 0.0)
                        b.le({x: -1.0, g: -self.m_flow}, 0.0)
                if opt.tier == 2:
                    t = {ix[("I", lid, ph)]: 1.0}
                    for kk, a in self.u_sum(i).items():
                        _add(t, kk, -line.i_max**2 * a)
                    b.le(t, 0.0)
            rh, xh = line.r_hat(), line.x_hat()
            for ph in phs:
                t = {ix[("V", i, ph)]: 1.0, ix[("V", j, ph)]: -1.0}
                for ps in phs:
                    _add(t, ix[("P", lid, ps)], -2.0 * rh[ph, ps])
                    _add(t, ix[("Q", lid, ps)], -2.0 * xh[ph, ps])
                if sw:
                    s = ix[("s", lid, ph)]
                    t[s] = -1.0
                    b.le({s: 1.0, g: self.m_volt}, self.m_volt)
                    b.le({s: -1.0, g: self.m_volt}, self.m_volt)
                b.eq(t, 0.0)

        # commodity conservation away from each source
        for k in sources:
            for jn in net.nodes:
                if jn == k:
                    continue
                t = {ix[("u", jn, k)]: -1.0}
                for lid, line in net.lines.items():
                    if line.to_node == jn:
                        _add(t, ix[("f", lid, k)], 1.0)
                    elif line.from_node == jn:
                        _add(t, ix[("f", lid, k)], -1.0)
                b.eq(t, 0.0)

        # energized edges = energized nodes - live sources
        t = {}
        for lid, line in net.lines.items():
            if line.switchable:
                _add(t, ix[("w", lid)], 1.0)
            else:
                for kk, a in self.u_sum(line.from_node).items():
                    _add(t, kk, a)
        for i in net.nodes:
            for kk, a in self.u_sum(i).items():
                _add(t, kk, -a)
        for k in sources:
            _add(t, ix[("u", k, k)], 1.0)
        b.eq(t, 0.0)

        for i, node in net.nodes.items():
            ratio = _q_ratio(node)
            for ph in node.phase_idx():
                v = ix[("V", i, ph)]
                lo, hi = {v: -1.0}, {v: 1.0}
                for kk, a in self.u_sum(i).items():
                    _add(lo, kk, vmin * a)
                    _add(hi, kk, -vmax * a)
                b.le(lo, 0.0)
                b.le(hi, 0.0)
                tp, tq = {}, {}
                if ("p", i, ph) in ix:
                    tp[ix[("p", i, ph)]] = -1.0
                    tq[ix[("p", i, ph)]] = -ratio[ph]
                if ("gp", i, ph) in ix:
                    tp[ix[("gp", i, ph)]] = 1.0
                    tq[ix[("gq", i, ph)]] = 1.0
                for lid, line in net.lines.items():
                    if ph not in _phases(net, line) or i not in (line.from_node, line.to_node):
                        continue
                    sgn = 1.0 if line.to_node == i else -1.0
                    _add(tp, ix[("P", lid, ph)], sgn)
                    _add(tq, ix[("Q", lid, ph)], sgn)
                    if opt.tier == 2:
                        # each end carries half of the series loss
                        _add(tp, ix[("I", lid, ph)], -0.5 * line.r[ph, ph])
                        _add(tq, ix[("I", lid, ph)], -0.5 * line.x[ph, ph])
                b.eq(tp, 0.0)
                b.eq(tq, 0.0)

    def cone_cuts(self, x: np.ndarray) -> tuple[list, float]:
        """Tangent cuts of I >= (P^2 + Q^2) / V at x and the largest cone violation."""
        ix, cuts, worst = self.b.index, [], 0.0
        for lid, line in self.net.lines.items():
            for ph in _phases(self.net, line):
                P, Q = x[ix[("P", lid, ph)]], x[ix[("Q", lid, ph)]]
                V = x[ix[("V", line.from_node, ph)]]
                I = x[ix[("I", lid, ph)]]
                viol = P * P + Q * Q - I * V
                if V <= 1e-9:
                    continue
                worst = max(worst, viol)
                if viol > 0.1 * self.opt.cone_tol:
                    cuts.append(({
                        ix[("I", lid, ph)]: -1.0,
                        ix[("P", lid, ph)]: 2 * P / V,
                        ix[("Q", lid, ph)]: 2 * Q / V,
                        ix[("V", line.from_node, ph)]: -(P * P + Q * Q) / V**2,
                    }, 0.0))
        return cuts, worst

    def initial_cuts(self) -> list:
        """Cuts at unit voltage over a grid of flow directions."""
        ix, cuts = self.b.index, []
        scale = self.m_flow / 2
        for lid, line in self.net.lines.items():
            for ph in _phases(self.net, line):
                for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
                    P, Q = scale * np.cos(ang), scale * np.sin(ang)
                    cuts.append(({
                        ix[("I", lid, ph)]: -1.0, ix[("P", lid, ph)]: 2 * P, ix[("Q", lid, ph)]: 2 * Q,
                        ix[("V", line.from_node, ph)]: -(P * P + Q * Q),
                    }, 0.0))
        return cuts


def _solve_model(model: _RestorationModel, extra_ub=(), fixed=None):
    """Branch and bound (with cone cut rounds on tier 2); returns (x, objective, nodes, rounds, violation)."""
    opt, b = model.opt, model.b
    rows = list(b.ub_rows) + list(extra_ub)
    cuts = model.initial_cuts() if opt.tier == 2 else []
    nodes = rounds = 0
    while True:
        bb = _Builder()
        bb.lb, bb.ub, bb.integer, bb.c = b.lb, b.ub, b.integer, b.c
        bb.ub_rows, bb.eq_rows = rows + cuts, b.eq_rows
        m = bb.milp(model.offset)
        if fixed:
            for j, v in fixed.items():
                m.lb[j] = m.ub[j] = v
        gap_rel = opt.mip_gap if opt.tier == 2 else 1e-9
        res = branch_and_bound(m, gap_abs=1e-7, gap_rel=gap_rel, node_limit=opt.node_limit,
                               time_limit=opt.time_limit_s)
        nodes += res.nodes
        if opt.tier == 1:
            return res.x, res.objective, nodes, 0, 0.0
        new, worst = model.cone_cuts(res.x)
        rounds += 1
        if worst < opt.cone_tol or rounds > opt.max_cone_cuts:
            if worst >= opt.cone_tol:
                raise SolverError(f"cone violation {worst:.2e} after {rounds} cut rounds")
            return res.x, res.objective, nodes, rounds, worst
        cuts = cuts + new


def _objective_row(model: _RestorationModel, bound: float):
    c = np.array(model.b.c)
    return ({j: float(v) for j, v in enumerate(c) if v != 0.0}, bound - model.offset)


def _losses_posthoc(net: Network, P: dict, Q: dict, V: dict) -> float:
    total = 0.0
    for lid, line in net.lines.items():
        for ph in _phases(net, line):
            p, q = P[lid][ph] / S_BASE_KW, Q[lid][ph] / S_BASE_KW
            v = max(V[line.from_node][ph], V[line.to_node][ph])
            if v > 1e-9:
                total += line.r[ph, ph] * (p * p + q * q) / v
    return S_BASE_KW * total


def _extract(model: _RestorationModel, x: np.ndarray) -> RestorationSolution:
    net, ix = model.net, model.b.index
    gamma = {e: int(round(x[ix[("g", e)]])) for e in model.switches}
    owner = {}
    for i in net.nodes:
        owner[i] = next((k for k in model.sources if round(x[ix[("u", i, k)]]) == 1), None)
    beta, p, q, sigma = {}, {}, {}, {}
    f1 = 0.0
    for i, node in net.nodes.items():
        pv = np.zeros(3)
        for ph in range(3):
            if ("p", i, ph) in ix:
                pv[ph] = x[ix[("p", i, ph)]] * S_BASE_KW
        p[i] = pv
        q[i] = pv * _q_ratio(node)
        sigma[i] = np.maximum(node.p_max - pv, 0.0)
        beta[i] = int(round(x[ix[("b", i)]])) if ("b", i) in ix else int(owner[i] is not None)
        f1 += node.weight * model.dt * float(sigma[i].sum())
    P, Q, I, S, F = {}, {}, {}, {}, {}
    for lid, line in net.lines.items():
        P[lid], Q[lid], I[lid], S[lid] = np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3)
        for ph in _phases(net, line):
            P[lid][ph] = x[ix[("P", lid, ph)]] * S_BASE_KW
            Q[lid][ph] = x[ix[("Q", lid, ph)]] * S_BASE_KW
            if ("I", lid, ph) in ix:
                I[lid][ph] = x[ix[("I", lid, ph)]]
            if ("s", lid, ph) in ix:
                S[lid][ph] = x[ix[("s", lid, ph)]]
        F[lid] = {k: float(x[ix[("f", lid, k)]]) for k in model.sources}
    V = {i: np.array([x[ix[("V", i, ph)]] if ("V", i, ph) in ix else 0.0 for ph in range(3)]) for i in net.nodes}
    if model.opt.tier == 2:
        f2 = S_BASE_KW * sum(net.lines[l].r[ph, ph] * I[l][ph] for l in net.lines for ph in range(3))
    else:
        f2 = _losses_posthoc(net, P, Q, V)
    closed = tuple(e for e in model.switches if gamma[e])
    return RestorationSolution(
        objective=f1 + f2, f1=f1, f2=f2, closed=closed, gamma=gamma, owner=owner, beta=beta,
        p_kw=p, q_kw=q, sigma_kw=sigma, P_kw=P, Q_kw=Q, V=V, I=I, commodity=F, slack_v=S,
    )


def solve_restoration(problem: RestorationProblem) -> RestorationSolution:
    """Optimal restoration of one scenario.

    Among optimal switch configurations the lexicographically smallest closed
    indicator vector (switches in network order, first switch most
    significant) is returned.
    """
    net, opt = problem.network, problem.options
    model = _RestorationModel(net, problem.faults(), problem.scenario.duration_h, opt)
    try:
        x, obj, nodes, rounds, viol = _solve_model(model)
    except Infeasible as exc:
        raise RestorationError(f"restoration model infeasible (model bug): {exc}") from exc

    fixed = {}
    extra = [_objective_row(model, obj + TIE_TOL)]
    for e in model.switches:
        j = model.b.index[("g", e)]
        if e in model.forced_open:
            continue
        if round(x[j]) == 0:
            fixed[j] = 0.0
            continue
        try:
            x2, _, n2, r2, v2 = _solve_model(model, extra, {**fixed, j: 0.0})
            nodes += n2
            fixed[j] = 0.0
            x, rounds, viol = x2, rounds + r2, v2
        except Infeasible:
            fixed[j] = 1.0
    sol = _extract(model, x)
    sol.nodes, sol.cone_rounds, sol.max_cone_violation = nodes, rounds, viol
    if not validate_radiality(net, sol.closed):
        raise RestorationError("solver returned a non-radial configuration")
    return sol


# ---------------------------------------------------------------- enumeration oracle

def _oracle_lp(net: Network, closed: set, owner: dict, tripped: set, duration_h: float, opt: RestorationOptions):
    """Continuous dispatch for a fixed radial configuration; returns (f1, f2) or None."""
    live = sorted(n for n, k in owner.items() if k is not None)
    lines = [l for l in net.lines.values() if (l.kind == "wire" or l.id in closed)
             and owner.get(l.from_node) is not None and owner.get(l.to_node) is not None]
    cols = {}

    def col(key, lo, hi):
        cols[key] = (len(cols), lo, hi)

    vmin, vmax = opt.v_min**2, opt.v_max**2
    for i in live:
        node = net.nodes[i]
        for ph in node.phase_idx():
            if node.p_max[ph] > 0 and i not in tripped:
                col(("p", i, ph), 0.0, node.p_max[ph] / S_BASE_KW)
            col(("V", i, ph), vmin, vmax)
            if node.is_source:
                col(("gp", i, ph), 0.0, node.source_p_cap[ph] / S_BASE_KW)
                qc = node.source_q_cap[ph] / S_BASE_KW
                col(("gq", i, ph), -qc, qc)
    for l in lines:
        for ph in _phases(net, l):
            col(("P", l.id, ph), None, None)
            col(("Q", l.id, ph), None, None)
    n = len(cols)
    c = np.zeros(n)
    A, rhs = [], []

    def row(entries, b):
        r = np.zeros(n)
        for key, a in entries:
            r[cols[key][0]] += a
        A.append(r)
        rhs.append(b)

    const = 0.0
    for i in net.nodes:
        node = net.nodes[i]
        for ph in node.phase_idx():
            w = node.weight * duration_h * S_BASE_KW
            d = node.p_max[ph] / S_BASE_KW
            const += w * d
            if ("p", i, ph) in cols:
                c[cols[("p", i, ph)][0]] = -w
    for i in live:
        node = net.nodes[i]
        ratio = _q_ratio(node)
        for ph in node.phase_idx():
            ep, eq = [], []
            if ("p", i, ph) in cols:
                ep.append((("p", i, ph), -1.0))
                eq.append((("p", i, ph), -ratio[ph]))
            if node.is_source:
                ep.append((("gp", i, ph), 1.0))
                eq.append((("gq", i, ph), 1.0))
            for l in lines:
                if ph in _phases(net, l) and i in (l.from_node, l.to_node):
                    s = 1.0 if l.to_node == i else -1.0
                    ep.append((("P", l.id, ph), s))
                    eq.append((("Q", l.id, ph), s))
            row(ep, 0.0)
            row(eq, 0.0)
            if node.is_source:
                row([(("V", i, ph), 1.0)], opt.v_source**2)
    for l in lines:
        rh, xh = l.r_hat(), l.x_hat()
        phs = _phases(net, l)
        for ph in phs:
            ent = [(("V", l.from_node, ph), 1.0), (("V", l.to_node, ph), -1.0)]
            for ps in phs:
                ent += [(("P", l.id, ps), -2 * rh[ph, ps]), (("Q", l.id, ps), -2 * xh[ph, ps])]
            row(ent, 0.0)
    bounds = [(lo, hi) for _, lo, hi in sorted(cols.values())]
    if n == 0:
        return const, 0.0
    res = linprog(c, A_eq=np.array(A) if A else None, b_eq=np.array(rhs) if A else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RestorationError(f"oracle LP failed: {res.message}")
    val = res.x
    P = {l.id: np.zeros(3) for l in net.lines.values()}
    Q = {l.id: np.zeros(3) for l in net.lines.values()}
    V = {i: np.zeros(3) for i in net.nodes}
    for key, (j, _, _) in cols.items():
        if key[0] == "P":
            P[key[1]][key[2]] = val[j] * S_BASE_KW
        elif key[0] == "Q":
            Q[key[1]][key[2]] = val[j] * S_BASE_KW
        elif key[0] == "V":
            V[key[1]][key[2]] = val[j]
    return const + float(res.fun), _losses_posthoc(net, P, Q, V)


def oracle_configurations(net: Network, forced_open: set, dead: set):
    """Radial closed-switch sets without dead-end closed switches, with their node owners."""
    free = [e for e in net.switchable if e not in forced_open]
    if len(free) > ORACLE_MAX_FREE_SWITCHES:
        raise RestorationError(f"{len(free)} free switches exceed the oracle limit {ORACLE_MAX_FREE_SWITCHES}")
    for bits in itertools.product((0, 1), repeat=len(free)):
        closed = {e for e, b in zip(free, bits) if b}
        owner = _energize(net, closed, dead)
        if any(v is None for v in owner.values()):
            continue
        if not _radial_live(net, closed, owner):
            continue
        if any(net.lines[e].from_node not in owner or net.lines[e].to_node not in owner for e in closed):
            continue
        yield closed, owner


def _radial_live(net: Network, closed: set, owner: dict) -> bool:
    live_edges = [l for l in net.lines.values() if (l.kind == "wire" or l.id in closed)
                  and l.from_node in owner and l.to_node in owner]
    return len(live_edges) == len(owner) - len(set(owner.values()))


def brute_force_oracle(problem: RestorationProblem) -> tuple[float, float, float, tuple]:
    """Exhaustive search over switch configurations, one dispatch LP each (tier 1 semantics).

    Returns ``(objective, f1, f2, closed)`` using the same tie-breaking as the
    solver: smallest f1, then the lexicographically smallest closed vector.
    """
    net, opt = problem.network, problem.options
    forced_open, dead, tripped = _fault_effects(net, problem.faults())
    best = None
    order = net.switchable
    for closed, owner in oracle_configurations(net, forced_open, dead):
        full = {n: owner.get(n) for n in net.nodes}
        out = _oracle_lp(net, closed, full, tripped, problem.scenario.duration_h, opt)
        if out is None:
            continue
        vec = tuple(int(e in closed) for e in order)
        f1, f2 = out
        if best is None or f1 < best[0] - TIE_TOL or (abs(f1 - best[0]) <= TIE_TOL and vec < best[2]):
            best = (f1, f2, vec, closed)
    if best is None:
        raise RestorationError("no feasible configuration")
    f1, f2, _, closed = best
    return f1 + f2, f1, f2, tuple(e for e in order if e in closed)


# ---------------------------------------------------------------- cached cost oracle

class CostOracle:
    """f(h, s) with a thread-safe memo keyed by the effective fault set and scenario."""

    def __init__(self, network: Network, catalog, options: RestorationOptions | None = None):
        self.network, self.catalog = network, catalog
        self.options = options or RestorationOptions()
        self._memo: dict = {}
        self._lock = threading.Lock()
        self.solves = 0

    def _key(self, decision, s: int):
        sc = self.catalog[s]
        faults = effective_faults(sc, decision, self.network, self.options.harden_semantics)
        return (faults, sc.duration_h)

    def solution(self, decision, s: int) -> RestorationSolution:
        problem = RestorationProblem(self.network, self.catalog[s], decision, self.options)
        return solve_restoration(problem)

    def parts(self, decision, s: int) -> tuple[float, float]:
        """(f1, f2) of scenario ``s`` under ``decision``."""
        key = self._key(decision, s)
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        sol = self.solution(decision, s)
        with self._lock:
            self.solves += 1
            return self._memo.setdefault(key, (sol.f1, sol.f2))

    def __call__(self, decision, s: int) -> float:
        return sum(self.parts(decision, s))

    def unserved(self, decision, s: int) -> float:
        return self.parts(decision, s)[0]

    def vector(self, decision) -> np.ndarray:
        return np.array([self(decision, s) for s in range(len(self.catalog))])


def cost(h: HardeningDecision, s: Scenario, network: Network, options: RestorationOptions | None = None) -> float:
    return solve_restoration(RestorationProblem(network, s, h, options or RestorationOptions())).objective


def with_options(options: RestorationOptions, **changes) -> RestorationOptions:
    return replace(options, **changes)
