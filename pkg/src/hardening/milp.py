"""Best-bound branch and bound over LP relaxations with reliability branching."""
from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

INT_TOL = 1e-6
LP_OPTIONS = {"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9}


class SolverError(RuntimeError):
    pass


class Infeasible(SolverError):
    pass


@dataclass
class MILP:
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    A_ub: sparse.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    A_eq: sparse.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    offset: float = 0.0


@dataclass
class MILPResult:
    x: np.ndarray
    objective: float
    bound: float
    nodes: int
    lp_solves: int


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    origin: tuple | None = field(default=None, compare=False)


class _Pseudocosts:
    def __init__(self, n: int):
        self.sum = np.zeros((2, n))
        self.cnt = np.zeros((2, n))

    def update(self, j: int, up: bool, gain: float, frac: float):
        d = frac if not up else 1.0 - frac
        if d > 1e-9 and np.isfinite(gain):
            self.sum[int(up), j] += gain / d
            self.cnt[int(up), j] += 1

    def estimate(self, j: int, up: bool) -> float:
        k = int(up)
        if self.cnt[k, j]:
            return self.sum[k, j] / self.cnt[k, j]
        seen = self.cnt[k] > 0
        return float(self.sum[k, seen].sum() / self.cnt[k, seen].sum()) if seen.any() else 1.0

    def reliable(self, j: int, threshold: int) -> bool:
        return min(self.cnt[0, j], self.cnt[1, j]) >= threshold


def solve_lp(m: MILP, lb: np.ndarray, ub: np.ndarray):
    """Solve the LP relaxation under the given bounds; None when infeasible."""
    res = linprog(
        m.c, A_ub=m.A_ub, b_ub=m.b_ub, A_eq=m.A_eq, b_eq=m.b_eq,
        bounds=np.column_stack([lb, ub]), method="highs", options=LP_OPTIONS,
    )
    if res.status == 2:
        return None
    if res.status != 0:
        raise SolverError(f"LP relaxation failed: {res.message}")
    return res.x, float(res.fun)


def branch_and_bound(m: MILP, gap_abs: float = 1e-7, gap_rel: float = 1e-9, node_limit: int = 20000,
                     time_limit: float | None = None, reliability: int = 1, strong_candidates: int = 6) -> MILPResult:
    """Minimize ``c x`` over the MILP.

    Nodes are explored best bound first. Branching uses pseudocosts once a
    variable has ``reliability`` observations in both directions and strong
    branching on the most fractional unreliable candidates before that.
    """
    t0 = time.perf_counter()
    ints = np.flatnonzero(m.integer)
    counter = itertools.count()
    pc = _Pseudocosts(len(m.c))
    stats = {"lp": 0}

    def lp(lb, ub):
        stats["lp"] += 1
        return solve_lp(m, lb, ub)

    root = lp(m.lb.copy(), m.ub.copy())
    if root is None:
        raise Infeasible("MILP relaxation infeasible")
    heap = [_Node(root[1], next(counter), m.lb.copy(), m.ub.copy())]
    cache = {heap[0].seq: root}
    best_x, best_obj = None, np.inf
    nodes = 0

    def close_enough(bound):
        return bound >= best_obj - max(gap_abs, gap_rel * abs(best_obj))

    while heap:
        node = heapq.heappop(heap)
        if close_enough(node.bound):
            heap.clear()
            break
        nodes += 1
        if nodes > node_limit or (time_limit and time.perf_counter() - t0 > time_limit):
            raise SolverError(f"branch and bound hit its limit after {nodes} nodes")
        sol = cache.pop(node.seq, None)
        if sol is None:
            sol = lp(node.lb, node.ub)
            if node.origin is not None:
                j, up, f, parent_obj = node.origin
                pc.update(j, up, sol[1] - parent_obj if sol else np.nan, f)
            if sol is None:
                continue
        x, obj = sol
        if close_enough(obj):
            continue
        frac = np.abs(x[ints] - np.round(x[ints]))
        cand = ints[frac > INT_TOL]
        if cand.size == 0:
            lb, ub = node.lb.copy(), node.ub.copy()
            lb[ints] = ub[ints] = np.round(x[ints])
            clean = lp(lb, ub)
            if clean is not None and clean[1] < best_obj:
                best_x, best_obj = clean
            continue

        j, children = _select_branch(lp, node, x, obj, cand, pc, reliability, strong_candidates)
        f = x[j] - np.floor(x[j])
        for up, (lb, ub, sol_child) in zip((False, True), children):
            if sol_child is False:
                continue
            bound = sol_child[1] if sol_child else obj
            if close_enough(bound):
                continue
            child = _Node(bound, next(counter), lb, ub, None if sol_child else (j, up, f, obj))
            if sol_child:
                cache[child.seq] = sol_child
            heapq.heappush(heap, child)

    if best_x is None:
        raise Infeasible("no integer-feasible solution")
    bound = min([best_obj] + [n.bound for n in heap])
    return MILPResult(best_x, best_obj + m.offset, bound + m.offset, nodes, stats["lp"])


def _split(node: _Node, j: int, val: float):
    lb0, ub0 = node.lb.copy(), node.ub.copy()
    ub0[j] = np.floor(val)
    lb1, ub1 = node.lb.copy(), node.ub.copy()
    lb1[j] = np.ceil(val)
    return (lb0, ub0), (lb1, ub1)


def _select_branch(lp, node, x, obj, cand, pc, reliability, strong_candidates):
    """Pick a branching variable; returns it with per-child (lb, ub, lp_result).

    ``lp_result`` is a solved child (x, obj), False for an infeasible child or
    None when the child still needs solving.
    """
    frac = x[cand] - np.floor(x[cand])
    unreliable = [k for k in range(len(cand)) if not pc.reliable(cand[k], reliability)]
    if unreliable:
        order = sorted(unreliable, key=lambda k: -min(frac[k], 1 - frac[k]))[:strong_candidates]
        best = None
        for k in order:
            j = int(cand[k])
            (lb0, ub0), (lb1, ub1) = _split(node, j, x[j])
            s0 = lp(lb0, ub0)
            s1 = lp(lb1, ub1)
            g0 = (s0[1] - obj) if s0 else np.inf
            g1 = (s1[1] - obj) if s1 else np.inf
            pc.update(j, False, g0 if s0 else np.nan, frac[k])
            pc.update(j, True, g1 if s1 else np.nan, frac[k])
            score = max(min(g0, 1e6), 1e-9) * max(min(g1, 1e6), 1e-9)
            if best is None or score > best[0] + 1e-12:
                best = (score, j, [(lb0, ub0, s0 if s0 else False), (lb1, ub1, s1 if s1 else False)])
            if s0 is None or s1 is None:
                break
        return best[1], best[2]
    scores = []
    for k, j in enumerate(cand):
        d = pc.estimate(j, False) * frac[k]
        u = pc.estimate(j, True) * (1 - frac[k])
        scores.append(max(d, 1e-9) * max(u, 1e-9))
    k = int(np.argmax(scores))
    j = int(cand[k])
    (lb0, ub0), (lb1, ub1) = _split(node, j, x[j])
    return j, [(lb0, ub0, None), (lb1, ub1, None)]
