"""Bayesian online learning over an l2 ambiguity set around a Dirichlet posterior mean."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .decision import HardeningDecision, enumerate_feasible, segment_options, _option_cost
from .network import Network
from .outage import OutageRecord, device_map, translation_matrix
from .regressor import RegressorModel, predict

HISTORY_HEADER = ["t", "worst_case_cost", "d_t", "regret_term", "epsilon_t", "h_bits"]
SQRT2 = math.sqrt(2.0)


class LearnerError(RuntimeError):
    pass


class EnumerationCapExceeded(LearnerError):
    pass


# ---------------------------------------------------------------- posterior and radius

@dataclass
class DirichletPosterior:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValueError("Dirichlet counts must be finite and >= 0")
        if self.counts.sum() <= 0:
            raise ValueError("Dirichlet counts must not all be zero")

    @classmethod
    def uniform(cls, n: int) -> "DirichletPosterior":
        return cls(np.ones(n))

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def mean(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def bayes_update(posterior: DirichletPosterior, o: np.ndarray, tol: float = 1e-6) -> DirichletPosterior:
    """Add a translated observation as fractional counts."""
    o = np.asarray(o, dtype=float)
    if o.shape != posterior.counts.shape:
        raise ValueError("observation length does not match the posterior")
    if np.any(o < -tol) or abs(o.sum() - 1.0) > tol:
        raise ValueError(f"observation is not a distribution (sum {o.sum():.8f})")
    return DirichletPosterior(posterior.counts + np.clip(o, 0.0, None))


def confidence_level(t: int, delta: float) -> float:
    return 6.0 * delta / (math.pi**2 * t * t)


def ambiguity_radius(t: int, n_scenarios: int, delta: float) -> float:
    """d_t = sqrt(2 |S| ln(2 / delta_t) / t) with delta_t = 6 delta / (pi^2 t^2)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * n_scenarios * math.log(2.0 / confidence_level(t, delta)) / t)


@dataclass(frozen=True)
class AmbiguitySet:
    center: np.ndarray
    radius: float
    delta: float = 0.05

    def contains(self, p: np.ndarray, tol: float = 1e-8) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= -tol) and abs(p.sum() - 1) <= tol and np.linalg.norm(p - self.center) <= self.radius + tol)


# ---------------------------------------------------------------- projections

def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    The threshold solves sum(max(y - tau, 0)) = 1, which is piecewise linear
    between the sorted entries; bisection over those breakpoints finds the
    support size and the threshold follows exactly.
    """
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    # support size k is valid while u[k-1] > (css[k-1]) / k; validity is monotone in k
    lo, hi = 1, len(u)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if u[mid - 1] * mid > css[mid - 1]:
            lo = mid
        else:
            hi = mid - 1
    return np.maximum(y - css[lo - 1] / lo, 0.0)


def _simplex_rows(Y: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection (sort and threshold)."""
    n = Y.shape[1]
    U = -np.sort(-Y, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = U - css / k > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(len(Y)), rho] / (rho + 1)
    return np.maximum(Y - tau[:, None], 0.0)


def project_ambiguity(q: np.ndarray, center: np.ndarray, radius: float, iters: int = 200) -> np.ndarray:
    """Nearest point to ``q`` in simplex intersected with the ball around ``center``.

    The minimizer is the simplex projection of (q + 2 nu c) / (1 + 2 nu) for the
    ball multiplier nu >= 0, found by bisection.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    q, c = np.asarray(q, dtype=float), np.asarray(center, dtype=float)
    if radius == 0.0:
        return c.copy()
    # feasible inputs come back untouched
    if q.min() >= 0.0 and abs(q.sum() - 1.0) <= 1e-12 and np.linalg.norm(q - c) <= radius:
        return q.copy()
    p = project_simplex(q)
    if np.linalg.norm(p - c) <= radius:
        return p

    def at(nu):
        return project_simplex((q + 2.0 * nu * c) / (1.0 + 2.0 * nu))

    lo, hi = 0.0, 1.0
    while np.linalg.norm(at(hi) - c) > radius:
        lo, hi = hi, hi * 2.0
        if hi > 1e16:
            return c.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(at(mid) - c) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return at(hi)


def inner_step(p_prev: np.ndarray, costs: np.ndarray, amb: AmbiguitySet, eta: float,
               scale: float = 1.0, steps: int = 1) -> np.ndarray:
    """Projected gradient ascent on the linear expectation p . costs."""
    p = np.asarray(p_prev, dtype=float)
    g = np.asarray(costs, dtype=float) / scale
    for _ in range(steps):
        p = project_ambiguity(p + eta * g, amb.center, amb.radius)
    return p


def worst_case(G: np.ndarray, center: np.ndarray, radius: float, iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Exact max of g . p over simplex and ball for every row g of ``G``.

    The maximizer is the simplex projection of c + tau g; tau is bisected so
    that the distance to the center equals the radius.
    Returns (values, maximizers).
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    c = np.asarray(center, dtype=float)
    H, n = G.shape
    if radius <= 0:
        return G @ c, np.tile(c, (H, 1))
    # ball holds every vertex, hence the whole simplex: best vertex wins
    far = np.sqrt((1.0 - c) ** 2 + (c @ c - c * c))
    if radius >= far.max():
        k = G.argmax(axis=1)
        return G[np.arange(H), k], np.eye(n)[k]
    spread = np.ptp(G, axis=1)
    flat = spread <= 1e-15 * np.maximum(1.0, np.abs(G).max(axis=1))
    Gn = G / np.where(flat, 1.0, spread)[:, None]

    def dist(tau):
        P = _simplex_rows(c[None, :] + tau[:, None] * Gn)
        return P, np.linalg.norm(P - c[None, :], axis=1)

    lo = np.zeros(H)
    hi = np.full(H, 1.0)
    _, d = dist(hi)
    grow = d < radius
    for _ in range(60):
        if not grow.any():
            break
        hi[grow] *= 4.0
        _, d = dist(hi)
        grow = (d < radius) & (hi < 1e12)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        _, d = dist(mid)
        out = d > radius
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
        if np.all(hi - lo <= 1e-14 * hi):
            break
    P, _ = dist(lo)
    vals = np.einsum("ij,ij->i", G, P)
    # ball never reached: optimum is the best vertex face
    unreached = hi >= 1e12
    if unreached.any():
        vals[unreached] = G[unreached].max(axis=1)
    vals[flat] = G[flat] @ c
    P[flat] = c
    return vals, P


def worst_case_bounds(G: np.ndarray, center: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Cheap lower (center) and upper (hyperplane ball, capped by the max entry) bounds."""
    lb = G @ center
    dev = np.linalg.norm(G - G.mean(axis=1, keepdims=True), axis=1)
    ub = np.minimum(lb + radius * dev, G.max(axis=1))
    return lb, ub


# ---------------------------------------------------------------- decision evaluation

class DecisionEvaluator:
    """Effective per-scenario cost vectors g_h, so the expected cost of h under p is g_h . p.

    ``translation`` is "regressor" (g_h = T_h' c_h with T_h from the network),
    "label_rule" (T_h from the hardening label rule) or "none" (g_h = c_h).
    """

    def __init__(self, network: Network, catalog, cost_fn: Callable, budget: float,
                 model: RegressorModel | None = None, translation: str = "none",
                 weather: np.ndarray | None = None, enum_cap: int = 4096, improvements=None):
        if translation not in ("none", "regressor", "label_rule"):
            raise ValueError(f"unknown translation '{translation}'")
        if translation == "regressor" and model is None:
            raise ValueError("regressor translation needs a model")
        self.network, self.catalog, self.cost_fn = network, catalog, cost_fn
        self.budget, self.model, self.translation = budget, model, translation
        self.weather = weather if weather is not None else (model.c_mean if model is not None else None)
        self.enum_cap = enum_cap
        self.improvements = improvements
        self.n_s = len(catalog)
        self._g: dict = {}
        self._c: dict = {}
        self.decisions = enumerate_feasible(network, budget, cap=enum_cap)
        self._G = None

    @property
    def enumerable(self) -> bool:
        return self.decisions is not None

    def costs(self, h: HardeningDecision) -> np.ndarray:
        if h.key not in self._c:
            self._c[h.key] = np.array([self.cost_fn(h, s) for s in range(self.n_s)], dtype=float)
        return self._c[h.key]

    def translation_of(self, hs: list) -> np.ndarray:
        """Stack of (S x S) matrices whose column s is the translation of scenario s."""
        n = self.n_s
        if self.translation == "none":
            return np.broadcast_to(np.eye(n), (len(hs), n, n))
        if self.translation == "label_rule":
            kw = {} if self.improvements is None else {"improvements": self.improvements}
            return np.stack([translation_matrix(self.catalog, h.hardened(self.network), **kw) for h in hs])
        bits = np.repeat(np.stack([h.bits(self.network) for h in hs]), n, axis=0)
        eye = np.tile(np.eye(n), (len(hs), 1))
        out = predict(self.model, bits, np.broadcast_to(self.weather, (len(bits), len(self.weather))), eye)
        return out.reshape(len(hs), n, n).transpose(0, 2, 1)

    def g_many(self, hs: list) -> np.ndarray:
        todo = [h for h in hs if h.key not in self._g]
        if todo:
            T = self.translation_of(todo)
            for h, Th in zip(todo, T):
                self._g[h.key] = Th.T @ self.costs(h)
        return np.array([self._g[h.key] for h in hs])

    def g(self, h: HardeningDecision) -> np.ndarray:
        return self.g_many([h])[0]

    def matrix(self) -> np.ndarray:
        if not self.enumerable:
            raise EnumerationCapExceeded(f"more than {self.enum_cap} feasible decisions")
        if self._G is None:
            self._G = self.g_many(self.decisions)
        return self._G


def _argmin_first(values: np.ndarray) -> int:
    m = values.min()
    return int(np.flatnonzero(values <= m + 1e-12 * max(1.0, abs(m)))[0])


def search_decisions(ev: DecisionEvaluator, score: Callable[[np.ndarray], np.ndarray]) -> tuple[HardeningDecision, float]:
    """Minimize ``score`` (applied row-wise to g vectors) over budget-feasible decisions.

    Enumeration when the feasible set fits ``enum_cap``; otherwise greedy by
    benefit per unit cost followed by one-change and swap local search.
    Ties go to the lexicographically smallest decision.
    """
    if ev.enumerable:
        vals = score(ev.matrix())
        k = _argmin_first(vals)
        return ev.decisions[k], float(vals[k])
    return _greedy(ev, score)


def _greedy(ev: DecisionEvaluator, score) -> tuple[HardeningDecision, float]:
    """Multi-start ratio greedy with repair-based local search.

    Starts from nothing and from every single measure forced in, so large
    items that a ratio rule would crowd out are still reached.
    """
    net, budget = ev.network, ev.budget
    opts = segment_options(net)
    segs = net.segments

    def spend(codes):
        return sum(_option_cost(s, c) for s, c in zip(segs, codes))

    def val(codes_list):
        return score(ev.g_many([HardeningDecision(tuple(c)) for c in codes_list]))

    def fill(cur):
        cur_val = float(val([cur])[0])
        while True:
            cands, extras = [], []
            base = spend(cur)
            for i, o in enumerate(opts):
                for c in o:
                    if c == cur[i]:
                        continue
                    new = list(cur)
                    new[i] = c
                    extra = spend(new) - base
                    if extra <= 0 or base + extra > budget + 1e-9:
                        continue
                    cands.append(new)
                    extras.append(extra)
            if not cands:
                return cur, cur_val
            vals = val(cands)
            gain = (cur_val - vals) / np.array(extras)
            k = int(np.argmax(gain))
            if gain[k] <= 1e-12:
                return cur, cur_val
            cur, cur_val = cands[k], float(vals[k])

    def repair(codes, keep):
        # drop other measures, least valuable first, until the budget fits
        codes = list(codes)
        while spend(codes) > budget + 1e-9:
            drops = []
            for j, c in enumerate(codes):
                if j != keep and c != 0:
                    d = list(codes)
                    d[j] = 0
                    drops.append(d)
            if not drops:
                return None
            vals = val(drops)
            codes = drops[int(np.argmin(vals))]
        return codes

    def polish(cur, cur_val):
        while True:
            neigh = []
            for i, o in enumerate(opts):
                for c in o:
                    if c == cur[i]:
                        continue
                    new = list(cur)
                    new[i] = c
                    fixed = repair(new, i)
                    if fixed is not None:
                        neigh.append(fixed)
            if not neigh:
                return cur, cur_val
            vals = val(neigh)
            k = min(range(len(neigh)), key=lambda k: (vals[k], tuple(neigh[k])))
            if vals[k] >= cur_val - 1e-12 * max(1.0, abs(cur_val)):
                return cur, cur_val
            cur, cur_val = fill(neigh[k])

    starts = [[0] * len(segs)]
    for i, o in enumerate(opts):
        for c in o:
            if c != 0:
                codes = [0] * len(segs)
                codes[i] = c
                if spend(codes) <= budget + 1e-9:
                    starts.append(codes)
    best = None
    for start in starts:
        cur, cur_val = polish(*fill(start))
        if best is None:
            best = (cur, cur_val)
            continue
        tol = 1e-12 * max(1.0, abs(best[1]))
        if cur_val < best[1] - tol or (cur_val <= best[1] + tol and tuple(cur) < tuple(best[0])):
            best = (cur, cur_val)
    return HardeningDecision(tuple(best[0])), best[1]


def outer_minimize(p: np.ndarray, ev: DecisionEvaluator) -> tuple[HardeningDecision, float]:
    """Budget-feasible h minimizing the translated expected cost under p."""
    p = np.asarray(p, dtype=float)
    return search_decisions(ev, lambda G: G @ p)


def exact_dro_reference(amb: AmbiguitySet, ev: DecisionEvaluator, hint: np.ndarray | None = None):
    """Decision minimizing the exact worst-case expectation over ``amb``; returns (h, value, all values)."""
    G = ev.matrix()
    lb, ub = worst_case_bounds(G, amb.center, amb.radius)
    if hint is not None:
        lb = np.maximum(lb, G @ hint)
    keep = np.flatnonzero(lb <= ub.min() + 1e-9 * max(1.0, abs(ub.min())))
    vals = np.full(len(G), np.inf)
    vals[keep] = worst_case(G[keep], amb.center, amb.radius)[0]
    k = _argmin_first(vals)
    return ev.decisions[k], float(vals[k]), vals


# ---------------------------------------------------------------- learner

@dataclass
class LearnerOptions:
    T: int = 500
    delta: float = 0.05
    eta: float = 0.05
    inner_steps: int = 1
    enum_cap: int = 4096
    seed: int = 0
    budget: float = 1.0
    regret_reference: str = "exact"
    cost_bound: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.regret_reference not in ("none", "exact"):
            raise ValueError("regret_reference must be 'none' or 'exact'")


@dataclass
class LearnerState:
    t: int
    h: HardeningDecision
    p: np.ndarray
    posterior: DirichletPosterior
    eta: float
    B: float
    L: float = 0.0
    delta: float = 0.05

    def ambiguity(self, t: int | None = None) -> AmbiguitySet:
        step = max(1, self.t if t is None else t)
        n = len(self.posterior.counts)
        return AmbiguitySet(self.posterior.mean(), ambiguity_radius(step, n, self.delta), self.delta)


@dataclass
class RegretTrace:
    learner_cost: list = field(default_factory=list)
    reference_cost: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    B: float = 0.0
    L: float = 0.0
    n_scenarios: int = 0
    delta: float = 0.05
    residual_unknown: bool = False
    stream_exhausted: bool = False

    @property
    def T(self) -> int:
        return len(self.learner_cost)

    def terms(self) -> np.ndarray:
        return np.array(self.learner_cost) - np.array(self.reference_cost)


def regret_bound(B: float, L: float, T: int, n_scenarios: int, delta: float) -> float:
    """Path-length term, summed radius term and averaged residual term of the regret bound."""
    lt = math.log(T) if T > 1 else 0.0
    path = math.sqrt(L / T)
    radius = 4.0 * math.sqrt(2.0 * n_scenarios * T) * (math.sqrt(lt) + math.sqrt(math.log(math.pi**2 / (3.0 * delta)))) / T
    resid = math.sqrt(2.0 * n_scenarios) * lt**1.5 / (1.5 * T)
    return B * (path + radius) + resid


def dynamic_regret(trace: RegretTrace) -> tuple[float, float]:
    """(D_T, bound); D_T averages learner minus reference worst case plus residual over the steps."""
    T = trace.T
    if T == 0:
        return 0.0, 0.0
    total = 0.0
    for a, b, e in zip(trace.learner_cost, trace.reference_cost, trace.epsilon):
        total += a - b + e
    return total / T, regret_bound(trace.B, trace.L, T, trace.n_scenarios, trace.delta)


def init_learner(catalog, ev: DecisionEvaluator, options: LearnerOptions,
                 prior_counts: np.ndarray | None = None) -> LearnerState:
    from .decision import random_feasible

    n = len(catalog)
    post = DirichletPosterior(np.ones(n) if prior_counts is None else prior_counts)
    if len(post.counts) != n:
        raise ValueError("prior length does not match the catalog")
    rng = np.random.default_rng(options.seed)
    h0 = random_feasible(ev.network, options.budget, rng)
    if options.cost_bound is not None:
        B = options.cost_bound
    elif ev.enumerable:
        B = float(ev.matrix().max())
    else:
        B = float(max(ev.costs(HardeningDecision.none(ev.network)).max(), 1e-12))
    return LearnerState(t=0, h=h0, p=post.mean(), posterior=post, eta=options.eta, B=max(B, 1e-12),
                        delta=options.delta)


def run_learner(T: int, ev: DecisionEvaluator, stream: Iterable[OutageRecord], options: LearnerOptions,
                truth_probs: Callable[[HardeningDecision], np.ndarray] | None = None,
                state: LearnerState | None = None, on_step: Callable | None = None):
    """Online loop: inner ascent, outer minimization, translation, posterior and radius update.

    Returns (final decision, RegretTrace, history rows).
    """
    catalog = ev.catalog
    dmap = device_map(catalog)
    n = len(catalog)
    state = state or init_learner(catalog, ev, options)
    trace = RegretTrace(B=state.B, n_scenarios=n, delta=options.delta, residual_unknown=truth_probs is None)
    history = []
    it = iter(stream)
    for t in range(1, T + 1):
        try:
            rec = next(it)
        except StopIteration:
            trace.stream_exhausted = True
            break
        amb = state.ambiguity(t)
        g_prev = ev.g(state.h)
        p_new = inner_step(state.p, g_prev, amb, state.eta, scale=state.B, steps=options.inner_steps)
        state.L += float(np.sum((p_new - state.p) ** 2))
        state.p = p_new
        h_new, _ = outer_minimize(p_new, ev)
        state.h = h_new

        g_h = ev.g(h_new)
        w_h = float(worst_case(g_h[None, :], amb.center, amb.radius)[0][0])
        if options.regret_reference == "exact" and ev.enumerable:
            _, w_ref, _ = exact_dro_reference(amb, ev, hint=p_new)
            w_ref = min(w_ref, w_h)
        else:
            w_ref = w_h

        if rec.clear_device not in dmap:
            raise LearnerError(f"step {t}: clearing device '{rec.clear_device}' maps to no scenario")
        o = np.zeros(n)
        o[dmap[rec.clear_device]] = 1.0
        o_t = _translate(ev, h_new, rec.weather(), o)
        state.posterior = bayes_update(state.posterior, o_t)
        state.t = t
        eps = float(np.linalg.norm(state.posterior.mean() - truth_probs(h_new))) if truth_probs else 0.0

        trace.learner_cost.append(w_h)
        trace.reference_cost.append(w_ref)
        trace.epsilon.append(eps)
        trace.L = state.L
        row = {"t": t, "worst_case_cost": w_h, "d_t": amb.radius, "regret_term": w_h - w_ref,
               "epsilon_t": eps, "h_bits": "".join(str(int(b)) for b in h_new.bits(ev.network))}
        history.append(row)
        if on_step:
            on_step(state, row)
    return state.h, trace, history


def _translate(ev: DecisionEvaluator, h: HardeningDecision, weather: np.ndarray, o: np.ndarray) -> np.ndarray:
    if ev.translation == "regressor":
        out = predict(ev.model, h.bits(ev.network), weather, o)
        return out / out.sum()
    if ev.translation == "label_rule":
        return ev.translation_of([h])[0] @ o
    return o


def history_csv(history: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for r in history:
        w.writerow([r["t"], f"{r['worst_case_cost']:.10g}", f"{r['d_t']:.10g}", f"{r['regret_term']:.10g}",
                    f"{r['epsilon_t']:.10g}", r["h_bits"]])
    return buf.getvalue()
