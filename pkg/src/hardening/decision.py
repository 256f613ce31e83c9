"""Hardening decisions: one measure per component, budget and geographic feasibility."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network

NONE, POLE, UNDERGROUND, PADMOUNT = 0, 1, 2, 3
MEASURE_NAMES = {NONE: "none", POLE: "pl", UNDERGROUND: "ud", PADMOUNT: "pd"}

# failure-probability improvement of each measure
DEFAULT_IMPROVEMENTS = {POLE: 0.6, UNDERGROUND: 0.95, PADMOUNT: 0.9}


class InfeasibleBudget(ValueError):
    pass


@dataclass(frozen=True)
class HardeningDecision:
    """Per-segment measure codes, aligned with ``network.segments``."""

    codes: tuple

    @classmethod
    def none(cls, network: Network) -> "HardeningDecision":
        return cls(tuple([NONE] * len(network.segments)))

    @classmethod
    def from_dict(cls, network: Network, measures: dict) -> "HardeningDecision":
        inv = {v: k for k, v in MEASURE_NAMES.items()}
        codes = [NONE] * len(network.segments)
        for i, seg in enumerate(network.segments):
            if seg.id in measures:
                codes[i] = inv[measures[seg.id]]
        return cls(tuple(codes))

    def as_dict(self, network: Network) -> dict:
        return {seg.id: MEASURE_NAMES[c] for seg, c in zip(network.segments, self.codes) if c != NONE}

    @property
    def key(self) -> str:
        return "".join(str(c) for c in self.codes)

    def immune(self, network: Network) -> frozenset:
        """Segments that survive any fault under the immunity reading (ud or pd)."""
        return frozenset(
            seg.id for seg, c in zip(network.segments, self.codes) if c in (UNDERGROUND, PADMOUNT)
        )

    def hardened(self, network: Network) -> dict:
        return {seg.id: c for seg, c in zip(network.segments, self.codes) if c != NONE}

    def cost(self, network: Network) -> float:
        total = 0.0
        for seg, c in zip(network.segments, self.codes):
            total += {NONE: 0.0, POLE: seg.cost_pl, UNDERGROUND: seg.cost_ud, PADMOUNT: seg.cost_pd}[c]
        return total

    def violations(self, network: Network, budget: float) -> list[str]:
        out = []
        if len(self.codes) != len(network.segments):
            return [f"decision length {len(self.codes)} != {len(network.segments)} segments"]
        for seg, c in zip(network.segments, self.codes):
            if seg.kind == "feeder" and c not in (NONE, POLE, UNDERGROUND):
                out.append(f"{seg.id}: feeder segments take pl or ud only")
            if seg.kind == "transformer" and c not in (NONE, PADMOUNT):
                out.append(f"{seg.id}: transformers take pd only")
            if c == POLE and seg.id in network.no_pole:
                out.append(f"{seg.id}: pole upgrade restricted")
            if c == UNDERGROUND and seg.id in network.no_underground:
                out.append(f"{seg.id}: undergrounding restricted")
        if self.cost(network) > budget + 1e-9:
            out.append(f"cost {self.cost(network):.4f} exceeds budget {budget:.4f}")
        return out

    def is_feasible(self, network: Network, budget: float) -> bool:
        return not self.violations(network, budget)

    def bits(self, network: Network) -> np.ndarray:
        """Regressor encoding: pl and ud flags per feeder segment, pd flag per transformer."""
        out = []
        for seg, c in zip(network.segments, self.codes):
            if seg.kind == "feeder":
                out += [float(c == POLE), float(c == UNDERGROUND)]
            else:
                out.append(float(c == PADMOUNT))
        return np.array(out)

    def summary(self, network: Network) -> dict:
        pl = sum(s.length_mi for s, c in zip(network.segments, self.codes) if c == POLE)
        ud = sum(s.length_mi for s, c in zip(network.segments, self.codes) if c == UNDERGROUND)
        pd = sum(1 for c in self.codes if c == PADMOUNT)
        return {"pl_miles": pl, "ud_miles": ud, "pd_count": pd, "budget_used": self.cost(network)}


def n_bits(network: Network) -> int:
    return sum(2 if s.kind == "feeder" else 1 for s in network.segments)


def segment_options(network: Network) -> list[list[int]]:
    opts = []
    for seg in network.segments:
        if seg.kind == "feeder":
            o = [NONE]
            if seg.id not in network.no_pole:
                o.append(POLE)
            if seg.id not in network.no_underground:
                o.append(UNDERGROUND)
        else:
            o = [NONE, PADMOUNT]
        opts.append(o)
    return opts


def _option_cost(seg, c) -> float:
    return {NONE: 0.0, POLE: seg.cost_pl, UNDERGROUND: seg.cost_ud, PADMOUNT: seg.cost_pd}[c]


def enumerate_feasible(network: Network, budget: float, cap: int | None = None) -> list[HardeningDecision] | None:
    """All budget-feasible decisions in lexicographic order, or None past ``cap``."""
    if budget < 0:
        raise InfeasibleBudget(f"budget {budget} < 0 admits no decision")
    opts = segment_options(network)
    segs = network.segments
    out: list[tuple] = []
    codes = [NONE] * len(segs)

    def rec(i: int, spent: float) -> bool:
        if i == len(segs):
            out.append(tuple(codes))
            return cap is None or len(out) <= cap
        for c in opts[i]:
            cost = spent + _option_cost(segs[i], c)
            if cost <= budget + 1e-9:
                codes[i] = c
                if not rec(i + 1, cost):
                    return False
        codes[i] = NONE
        return True

    if not rec(0, 0.0):
        return None
    return [HardeningDecision(c) for c in out]


def random_feasible(network: Network, budget: float, rng: np.random.Generator) -> HardeningDecision:
    """Random feasible decision built by adding options in random order while budget allows."""
    if budget < 0:
        raise InfeasibleBudget(f"budget {budget} < 0 admits no decision")
    opts = segment_options(network)
    codes = [NONE] * len(network.segments)
    spent = 0.0
    for i in rng.permutation(len(codes)):
        choices = opts[i][1:]
        if not choices or rng.random() < 0.5:
            continue
        c = choices[rng.integers(len(choices))]
        cost = _option_cost(network.segments[i], c)
        if spent + cost <= budget + 1e-9:
            codes[i] = c
            spent += cost
    return HardeningDecision(tuple(codes))


def total_hardening_cost(network: Network) -> float:
    """Cost of the most expensive option on every component (budget that buys everything)."""
    return sum(max(_option_cost(s, c) for c in o) for s, o in zip(network.segments, segment_options(network)))
