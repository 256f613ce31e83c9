"""Robust, stochastic and static distributionally robust hardening plus the trial harness."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .decision import HardeningDecision, InfeasibleBudget
from .dro import DecisionEvaluator, search_decisions, worst_case

REPORT_HEADER = ["strategy", "mean_kwh", "lo_kwh", "hi_kwh", "n_trials", "n_scen"]


def _check(ev: DecisionEvaluator):
    if ev.budget < 0:
        raise InfeasibleBudget(f"budget {ev.budget} < 0 admits no decision")


def _probs_for(ev: DecisionEvaluator, probs: np.ndarray):
    probs = np.asarray(probs, dtype=float)
    if abs(probs.sum() - 1) > 1e-9 or np.any(probs < 0):
        raise ValueError("probs must be a distribution")
    return probs


def solve_ro(ev: DecisionEvaluator) -> tuple[HardeningDecision, float]:
    """Minimize the worst single-scenario cost."""
    _check(ev)
    return search_decisions(ev, lambda G: G.max(axis=1))


def solve_sp(ev: DecisionEvaluator, probs: np.ndarray) -> tuple[HardeningDecision, float]:
    """Minimize the expected cost under ``probs``."""
    _check(ev)
    p = _probs_for(ev, probs)
    return search_decisions(ev, lambda G: G @ p)


def solve_dro_static(ev: DecisionEvaluator, center: np.ndarray, radius: float) -> tuple[HardeningDecision, float]:
    """Minimize the exact worst-case expectation over a fixed l2 ball around ``center``."""
    _check(ev)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    c = _probs_for(ev, center)
    return search_decisions(ev, lambda G: worst_case(G, c, radius)[0])


@dataclass
class TrialReport:
    strategies: list
    per_trial: dict = field(default_factory=dict)
    n_trials: int = 0
    n_scen: int = 0
    percentile: float | None = None

    def bounds(self, name: str) -> tuple[float, float, float]:
        v = np.asarray(self.per_trial[name])
        if self.percentile is None:
            return float(v.mean()), float(v.min()), float(v.max())
        return float(v.mean()), float(np.percentile(v, self.percentile)), float(np.percentile(v, 100 - self.percentile))

    def rows(self) -> list:
        out = []
        for name in self.strategies:
            mean, lo, hi = self.bounds(name)
            out.append({"strategy": name, "mean_kwh": mean, "lo_kwh": lo, "hi_kwh": hi,
                        "n_trials": self.n_trials, "n_scen": self.n_scen})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows():
            w.writerow([r["strategy"], f"{r['mean_kwh']:.6f}", f"{r['lo_kwh']:.6f}", f"{r['hi_kwh']:.6f}",
                        r["n_trials"], r["n_scen"]])
        return buf.getvalue()


def compare_trials(strategies: dict, cost_fn, scenario_probs, n_trials: int = 50, n_scen: int = 50,
                   seed: int = 0, percentile: float | None = None) -> TrialReport:
    """Mean realized cost per trial for fixed decisions.

    ``strategies`` maps a name to a HardeningDecision; ``scenario_probs(h)``
    gives the true scenario distribution under h and ``cost_fn(h, s)`` the
    realized cost. Each trial reuses one uniform stream across strategies.
    """
    if n_trials < 1 or n_scen < 1:
        raise ValueError("n_trials and n_scen must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n_trials, n_scen))
    report = TrialReport(strategies=list(strategies), n_trials=n_trials, n_scen=n_scen, percentile=percentile)
    for name, h in strategies.items():
        p = np.asarray(scenario_probs(h), dtype=float)
        cdf = np.cumsum(p / p.sum())
        draws = np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)
        costs = np.array([cost_fn(h, s) for s in range(len(p))])
        report.per_trial[name] = costs[draws].mean(axis=1).tolist()
    return report
