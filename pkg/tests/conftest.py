import copy
import json
from pathlib import Path

import numpy as np
import pytest

from hardening.network import builtin_network, network_from_dict
from hardening.pipeline import RunConfig, fit_translation_model, make_world, truth_distribution
from hardening.restoration import CostOracle

DATA = Path(__file__).resolve().parents[1] / "src" / "hardening" / "data"
FIXTURES = ("chain3", "twofeeder", "ieee13")


def fixture_doc(name: str) -> dict:
    return json.loads((DATA / f"{name}.json").read_text())


def chain_doc(kind: str | None = None) -> dict:
    """S-A-B chain; ``kind`` places a device on A-B, None keeps it a wire."""
    doc = copy.deepcopy(fixture_doc("chain3"))
    if kind is None:
        doc["lines"][1].update(kind="wire", i_max=4.0, length_mi=0.5)
    else:
        doc["lines"][1]["kind"] = kind
    return doc


def two_segment_net():
    """S-A wire, A-B fuse, B-C wire: two hardenable zones, budget 3 buys one undergrounding."""
    doc = copy.deepcopy(fixture_doc("chain3"))
    doc["nodes"].append({"id": "C", "phases": "a", "p_max": [4], "q_max": [1], "weight": 1.0})
    doc["lines"].append({**copy.deepcopy(doc["lines"][0]), "id": "L3", "from": "B", "to": "C"})
    return network_from_dict(doc, name="two_segment")


class TableCost:
    """cost(h, s) = table[s] unless segment s is undergrounded, then 0."""

    def __init__(self, network, table):
        self.network, self.table = network, list(table)

    def __call__(self, h, s):
        return 0.0 if h.codes[s] == 2 else float(self.table[s])


@pytest.fixture(scope="session")
def networks():
    return {name: builtin_network(name) for name in FIXTURES}


@pytest.fixture(scope="session")
def ieee13():
    return builtin_network("ieee13")


@pytest.fixture(scope="session")
def world():
    """Synthetic ieee13 world: truth, records, trained translation model and shared cost oracle."""
    cfg = RunConfig()
    net = builtin_network(cfg.network)
    catalog, truth, records = make_world(cfg, net)
    model, trace, data, splits = fit_translation_model(records, catalog, net, cfg.train_decisions,
                                                       cfg.training, cfg.train_seed)
    return {
        "cfg": cfg, "network": net, "catalog": catalog, "truth": truth, "records": records,
        "model": model, "trace": trace, "data": data, "splits": splits,
        "oracle": CostOracle(net, catalog, cfg.solver),
        "truth_probs": truth_distribution(truth, catalog, net),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
