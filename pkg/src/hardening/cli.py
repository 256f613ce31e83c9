"""Command-line front end: gen-data, train, evaluate, optimize, compare, report.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from .decision import HardeningDecision, InfeasibleBudget
from .dro import LearnerError, dynamic_regret, history_csv, run_learner
from .outage import (
    GroundTruthModel, OutageDataError, build_scenario_catalog, default_truth, read_records, synth_generate,
    write_records,
)
from .pipeline import (
    ConfigError, RunConfig, apply_overrides, learner_evaluator, learner_stream, resolve_network,
    run_strategies, training_instances, trial_report, truth_distribution,
)
from .regressor import RegressorModel, evaluate, split_indices, train
from .restoration import CostOracle

COMMANDS = ("gen-data", "train", "evaluate", "optimize", "compare", "report")


class Run:
    """Resolved config plus the output directory and the artifacts written so far."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.artifacts: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.artifacts.append(name)
        return path

    def write_json(self, name: str, doc) -> Path:
        return self.write(name, json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def input_path(self, key: str, default_name: str, required: bool = True) -> Path | None:
        ref = getattr(self.cfg, key)
        path = Path(ref) if ref else self.out / default_name
        if not path.exists():
            if required:
                raise ConfigError(f"config key '{key}': no such file '{path}'")
            return None
        return path

    def manifest(self) -> None:
        path = self.out / "manifest.json"
        doc = json.loads(path.read_text()) if path.exists() else {}
        doc.setdefault("commands", {})[self.command] = {
            "config_hash": self.cfg.hash(),
            "artifacts": sorted(set(self.artifacts)),
            "config": self.cfg.to_dict(),
        }
        doc["updated"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _world(run: Run):
    net = resolve_network(run.cfg.network)
    records = read_records(run.input_path("records", "outages.csv"))
    catalog = build_scenario_catalog(net, records)
    return net, records, catalog


def _truth(run: Run, required: bool) -> GroundTruthModel | None:
    path = run.input_path("truth", "truth.json", required=required)
    return GroundTruthModel.load(path) if path else None


def _model(run: Run) -> RegressorModel:
    return RegressorModel.load(run.input_path("model", "model.json"))


def cmd_gen_data(run: Run) -> None:
    cfg = run.cfg
    if cfg.events <= 0:
        raise ConfigError("config key 'events' must be > 0")
    net = resolve_network(cfg.network)
    catalog0 = build_scenario_catalog(net)
    truth = default_truth(catalog0, cfg.truth_seed)
    records = synth_generate(truth, catalog0, cfg.events, seed=cfg.data_seed)
    buf = io.StringIO()
    write_records(records, buf)
    run.write("outages.csv", buf.getvalue())
    run.write_json("truth.json", truth.to_dict())
    print(f"wrote {len(records)} outage records for {len(catalog0)} scenarios")


def cmd_train(run: Run) -> None:
    cfg = run.cfg
    net, records, catalog = _world(run)
    data = training_instances(records, catalog, net, cfg.train_decisions, cfg.train_seed)
    model, trace, (_, _, te) = train(data, cfg.training, seed=cfg.train_seed)
    run.artifacts.append("model.json")
    model.save(run.out / "model.json")
    rows = ["epoch,train_loss,val_loss"]
    rows += [f"{i + 1},{a:.10g},{b:.10g}" for i, (a, b) in enumerate(zip(trace.train_loss, trace.val_loss))]
    run.write("training_trace.csv", "\n".join(rows) + "\n")
    metrics = evaluate(model, [data[i] for i in te]) if len(te) else {}
    run.write_json("train_metrics.json", {"best_epoch": trace.best_epoch, "stopped_early": trace.stopped_early,
                                          "test": metrics, "n_instances": len(data)})
    print(f"trained on {len(data)} instances, best epoch {trace.best_epoch}, test {metrics}")


def cmd_evaluate(run: Run) -> None:
    cfg = run.cfg
    net, records, catalog = _world(run)
    model = _model(run)
    data = training_instances(records, catalog, net, cfg.train_decisions, cfg.train_seed)
    _, _, te = split_indices(len(data), cfg.training.split, cfg.train_seed)
    if len(te) == 0:
        raise ConfigError("config key 'training.split' leaves no test instances")
    metrics = evaluate(model, [data[i] for i in te])
    run.write_json("metrics.json", {"n_test": int(len(te)), **metrics})
    print(json.dumps(metrics, sort_keys=True))


def _learn(run: Run, budget: float | None = None):
    cfg = run.cfg
    opts = cfg.learner if budget is None else type(cfg.learner)(**{**vars(cfg.learner), "budget": budget})
    if opts.budget < 0:
        raise ConfigError("config key 'learner.budget' must be >= 0")
    net, records, catalog = _world(run)
    model = _model(run)
    truth = _truth(run, required=False)
    probs = truth_distribution(truth, catalog, net) if truth else None
    oracle = CostOracle(net, catalog, cfg.solver)
    ev = learner_evaluator(net, catalog, oracle, model, opts, jobs=cfg.jobs)
    stream = learner_stream(records, opts.T, opts.seed)
    step = {"t": 0}
    try:
        h, trace, history = run_learner(opts.T, ev, stream, opts, truth_probs=probs,
                                        on_step=lambda state, row: step.update(t=row["t"]))
    except LearnerError:
        raise
    except Exception as e:
        raise LearnerError(f"step {step['t'] + 1}: {type(e).__name__}: {e}") from e
    return net, opts, h, trace, history


def _summary(net, opts, h: HardeningDecision, trace, history) -> dict:
    d_t, bound = dynamic_regret(trace)
    return {
        **h.summary(net),
        "budget": opts.budget,
        "worst_case_kwh": history[-1]["worst_case_cost"] if history else None,
        "iterations": len(history),
        "dynamic_regret": d_t,
        "regret_bound": bound,
        "path_length": trace.L,
        "cost_bound": trace.B,
        "residual_unknown": trace.residual_unknown,
        "stream_exhausted": trace.stream_exhausted,
    }


def cmd_optimize(run: Run) -> None:
    net, opts, h, trace, history = _learn(run)
    run.write("history.csv", history_csv(history))
    run.write_json("decision.json", {"measures": h.as_dict(net), "codes": list(h.codes),
                                     "h_bits": "".join(str(int(b)) for b in h.bits(net))})
    summary = _summary(net, opts, h, trace, history)
    run.write_json("summary.json", summary)
    print(f"final decision {h.as_dict(net)}")
    print(f"worst-case expected unserved load {summary['worst_case_kwh']:.3f} kWh, "
          f"pl {summary['pl_miles']:.3f} mi, ud {summary['ud_miles']:.3f} mi, pd {summary['pd_count']}")


def cmd_compare(run: Run) -> None:
    cfg = run.cfg
    net, records, catalog = _world(run)
    model = _model(run)
    truth = _truth(run, required=True)
    probs = truth_distribution(truth, catalog, net)
    oracle = CostOracle(net, catalog, cfg.solver)
    stream = learner_stream(records, cfg.learner.T, cfg.learner.seed)
    strategies, _, _ = run_strategies(net, catalog, oracle, model, probs, cfg.learner, stream,
                                      cfg.solver.harden_semantics, cfg.dro_radius, jobs=cfg.jobs)
    report = trial_report(strategies, oracle, probs, cfg.n_trials, cfg.n_scen, cfg.trial_seed, cfg.percentile)
    run.write("report.csv", report.to_csv())
    run.write_json("decisions.json", {k: h.as_dict(net) for k, h in strategies.items()})
    for r in report.rows():
        print(f"{r['strategy']:>8}: mean {r['mean_kwh']:.3f} kWh [{r['lo_kwh']:.3f}, {r['hi_kwh']:.3f}]")


def cmd_report(run: Run) -> None:
    cfg = run.cfg
    hist_path = run.out / "history.csv"
    if hist_path.exists():
        rows = list(csv.DictReader(io.StringIO(hist_path.read_text())))
        objective = [(int(r["t"]), float(r["worst_case_cost"]), float(r["regret_term"])) for r in rows]
    else:
        _, _, _, _, history = _learn(run)
        objective = [(r["t"], r["worst_case_cost"], r["regret_term"]) for r in history]
    lines = ["t,worst_case_kwh,regret_term"] + [f"{t},{w:.10g},{g:.10g}" for t, w, g in objective]
    run.write("objective_vs_iteration.csv", "\n".join(lines) + "\n")

    lines = ["budget,worst_case_kwh,pl_miles,ud_miles,pd_count,budget_used"]
    for b in cfg.sweep_budgets:
        net, opts, h, trace, history = _learn(run, budget=float(b))
        s = _summary(net, opts, h, trace, history)
        lines.append(f"{b:.10g},{s['worst_case_kwh']:.10g},{s['pl_miles']:.10g},{s['ud_miles']:.10g},"
                     f"{s['pd_count']},{s['budget_used']:.10g}")
        print(f"budget {b}: worst-case {s['worst_case_kwh']:.3f} kWh")
    run.write("budget_sweep.csv", "\n".join(lines) + "\n")


HANDLERS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate,
    "optimize": cmd_optimize, "compare": cmd_compare, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hardening", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, dotted for nested sections")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, help="worker cap for restoration solves")
    parser.add_argument("--network", help="shorthand for --set network=...")
    parser.add_argument("--events", type=int, help="shorthand for --set events=...")
    parser.add_argument("--seed", type=int, help="shorthand for --set data_seed=...")
    parser.add_argument("--budget", type=float, help="shorthand for --set learner.budget=...")
    return parser


def load_config(args) -> RunConfig:
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file '{path}' not found")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file '{path}': {e}") from e
    shortcuts = {"network": args.network, "events": args.events, "data_seed": args.seed,
                 "learner.budget": args.budget, "jobs": args.jobs}
    overrides = list(args.set) + [f"{k}={json.dumps(v)}" for k, v in shortcuts.items() if v is not None]
    cfg = RunConfig.from_dict(apply_overrides(doc, overrides))
    if cfg.jobs < 1:
        raise ConfigError("config key 'jobs' must be >= 1")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        cfg = load_config(args)
        run = Run(args.command, cfg, Path(args.out))
        HANDLERS[args.command](run)
        run.manifest()
    except (ConfigError, InfeasibleBudget) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OutageDataError, LearnerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
