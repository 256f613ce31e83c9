"""Run configuration and the glue shared by the CLI, experiment scripts and acceptance tests."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import compare_trials, solve_dro_static, solve_ro, solve_sp
from .decision import HardeningDecision, random_feasible, total_hardening_cost
from .dro import DecisionEvaluator, LearnerOptions, run_learner
from .network import Network, builtin_network, load_network
from .outage import (
    GroundTruthModel, build_scenario_catalog, construct_training_set, default_truth, synth_generate,
    translation_matrix,
)
from .regressor import RegressorModel, TrainingConfig, train
from .restoration import CostOracle, RestorationOptions

BUILTIN_NETWORKS = ("ieee13", "chain3", "twofeeder")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    network: str = "ieee13"
    records: str | None = None
    truth: str | None = None
    model: str | None = None
    events: int = 4000
    data_seed: int = 7
    truth_seed: int = 0
    train_decisions: int = 40
    train_seed: int = 0
    training: TrainingConfig = field(default_factory=lambda: TrainingConfig(max_epochs=60, patience=8))
    solver: RestorationOptions = field(default_factory=RestorationOptions)
    learner: LearnerOptions = field(default_factory=lambda: LearnerOptions(budget=0.5))
    n_trials: int = 50
    n_scen: int = 50
    trial_seed: int = 0
    dro_radius: float = 0.1
    percentile: float | None = None
    sweep_budgets: tuple = (0.0, 0.1, 0.2, 0.3, 0.5)
    jobs: int = 1

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        return _build(cls, doc, "")


def _build(cls, doc: dict, prefix: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section '{prefix or 'root'}' must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys {[prefix + k for k in unknown]}")
    defaults = cls()
    kwargs = {}
    for name, value in doc.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            value = _build(type(current), {**_shallow(current), **value} if isinstance(value, dict) else value,
                           prefix + name + ".")
        elif isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix or 'config'}: {e}") from e


def _shallow(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings; values parse as JSON and fall back to plain strings."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{key}' descends into a non-object")
        node[parts[-1]] = value
    return doc


def resolve_network(ref: str | None) -> Network:
    if not ref:
        raise ConfigError("missing config key 'network'")
    if ref in BUILTIN_NETWORKS:
        return builtin_network(ref)
    if not Path(ref).exists():
        raise ConfigError(f"config key 'network': no such file '{ref}'")
    return load_network(ref)


def training_instances(records, catalog, network: Network, n_decisions: int, seed: int = 0):
    """Records split across random decisions (the first chunk stays unhardened) and labelled."""
    rng = np.random.default_rng(seed)
    full = total_hardening_cost(network)
    chunks = np.array_split(np.arange(len(records)), max(1, n_decisions))
    out = []
    for i, idx in enumerate(chunks):
        h = HardeningDecision.none(network) if i == 0 else random_feasible(network, full, rng)
        out += construct_training_set([records[j] for j in idx], catalog, network, h)
    return out


def fit_translation_model(records, catalog, network: Network, n_decisions: int, config: TrainingConfig,
                          seed: int = 0):
    data = training_instances(records, catalog, network, n_decisions, seed)
    model, trace, splits = train(data, config, seed=seed)
    return model, trace, data, splits


def truth_distribution(truth: GroundTruthModel, catalog, network: Network):
    """h -> true scenario distribution under h (base probabilities integrated once)."""
    base = truth.scenario_probs(catalog)
    cache = {}

    def probs(h: HardeningDecision) -> np.ndarray:
        if h.key not in cache:
            cache[h.key] = translation_matrix(catalog, h.hardened(network)) @ base
        return cache[h.key]

    probs.base = base
    return probs


def prefetch_costs(oracle: CostOracle, decisions, jobs: int = 1) -> None:
    """Fill the cost memo for every distinct (effective fault set, scenario)."""
    seen, work = set(), []
    for h in decisions:
        for s in range(len(oracle.catalog)):
            k = oracle._key(h, s)
            if k not in seen:
                seen.add(k)
                work.append((h, s))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(lambda a: oracle.parts(*a), work))
    else:
        for h, s in work:
            oracle.parts(h, s)


def learner_evaluator(network, catalog, oracle, model: RegressorModel, options: LearnerOptions,
                      translation: str = "regressor", jobs: int = 1) -> DecisionEvaluator:
    ev = DecisionEvaluator(network, catalog, oracle, options.budget, model=model,
                           translation=translation, enum_cap=options.enum_cap)
    if jobs > 1 and ev.enumerable:
        prefetch_costs(oracle, ev.decisions, jobs)
    return ev


def baseline_evaluator(network, catalog, oracle, budget: float, semantics: str, enum_cap: int = 4096):
    translation = "label_rule" if semantics == "probability_only" else "none"
    return DecisionEvaluator(network, catalog, oracle, budget, translation=translation, enum_cap=enum_cap)


def learner_stream(records, T: int, seed: int):
    """The first ``T`` records after a seeded shuffle."""
    order = np.random.default_rng(seed).permutation(len(records))
    return [records[i] for i in order[:T]]


def run_strategies(network, catalog, oracle, model, truth_probs, options: LearnerOptions, stream,
                   semantics: str, dro_radius: float = 0.1, jobs: int = 1):
    """Decisions of the online learner and the three baselines under one budget."""
    ev = learner_evaluator(network, catalog, oracle, model, options, jobs=jobs)
    h_online, trace, history = run_learner(options.T, ev, stream, options, truth_probs=truth_probs)
    bev = baseline_evaluator(network, catalog, oracle, options.budget, semantics, options.enum_cap)
    base = truth_probs.base
    h_ro, _ = solve_ro(bev)
    h_sp, _ = solve_sp(bev, base)
    h_dro, _ = solve_dro_static(bev, base, dro_radius)
    return {"proposed": h_online, "RO": h_ro, "SP": h_sp, "DRO": h_dro}, trace, history


def make_world(cfg: RunConfig, network: Network):
    """Ground truth, sampled records and the record-calibrated scenario catalog."""
    catalog0 = build_scenario_catalog(network)
    truth = default_truth(catalog0, cfg.truth_seed)
    records = synth_generate(truth, catalog0, cfg.events, seed=cfg.data_seed)
    catalog = build_scenario_catalog(network, records)
    return catalog, truth, records


def trial_report(strategies: dict, oracle: CostOracle, truth_probs, n_trials=50, n_scen=50, seed=0,
                 percentile=None):
    return compare_trials(strategies, oracle.unserved, truth_probs, n_trials, n_scen, seed, percentile)
