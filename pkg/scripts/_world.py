"""Shared setup for the experiment scripts: build the synthetic world from a RunConfig."""
from __future__ import annotations

import argparse
import json
from pathlib import Path

from hardening.pipeline import RunConfig, apply_overrides, fit_translation_model, make_world, resolve_network
from hardening.pipeline import truth_distribution
from hardening.restoration import CostOracle


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default="out/experiments")
    return p


def load(args) -> dict:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = RunConfig.from_dict(apply_overrides(doc, args.set))
    net = resolve_network(cfg.network)
    catalog, truth, records = make_world(cfg, net)
    model, trace, _, _ = fit_translation_model(records, catalog, net, cfg.train_decisions, cfg.training,
                                               cfg.train_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return {"cfg": cfg, "network": net, "catalog": catalog, "records": records, "model": model,
            "oracle": CostOracle(net, catalog, cfg.solver), "truth_probs": truth_distribution(truth, catalog, net),
            "out": out}
