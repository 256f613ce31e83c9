"""Three-phase radial distribution network, protection zones and radiality checks."""
from __future__ import annotations

import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PHASES = "abc"
LINE_KINDS = ("wire", "switch", "breaker", "recloser", "fuse")
PROTECTION_KINDS = ("breaker", "recloser", "fuse")
SWITCH_EPS = 1e-5
S_BASE_KW = 1000.0

# default hardening costs in $M, per mile for feeder measures
POLE_COST_PER_MI = 0.3
UNDERGROUND_COST_PER_MI = 3.0
PADMOUNT_COST = 0.05


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    phases: str
    p_max: np.ndarray
    q_max: np.ndarray
    weight: float = 1.0
    is_source: bool = False
    source_p_cap: np.ndarray | None = None
    source_q_cap: np.ndarray | None = None
    transformer: bool = False

    def phase_idx(self) -> list[int]:
        return [PHASES.index(ph) for ph in self.phases]


@dataclass(frozen=True)
class Line:
    id: str
    from_node: str
    to_node: str
    kind: str
    r: np.ndarray
    x: np.ndarray
    i_max: float
    length_mi: float = 0.0
    normally_open: bool = False

    @property
    def switchable(self) -> bool:
        return self.kind != "wire"

    def r_hat(self) -> np.ndarray:
        return equivalent_impedance(self.r, self.x)[0]

    def x_hat(self) -> np.ndarray:
        return equivalent_impedance(self.r, self.x)[1]


@dataclass(frozen=True)
class LineSegment:
    id: str
    kind: str  # "feeder" or "transformer"
    member_lines: frozenset
    member_nodes: frozenset
    boundary_devices: frozenset
    length_mi: float = 0.0
    cost_pl: float = 0.0
    cost_ud: float = 0.0
    cost_pd: float = 0.0


@dataclass
class Network:
    nodes: dict
    lines: dict
    segments: list = field(default_factory=list)
    no_underground: frozenset = frozenset()
    no_pole: frozenset = frozenset()
    name: str = ""

    @property
    def sources(self) -> list[str]:
        return [n for n, node in self.nodes.items() if node.is_source]

    @property
    def tie_switches(self) -> list[str]:
        return [l for l, line in self.lines.items() if line.normally_open]

    @property
    def switchable(self) -> list[str]:
        return [l for l, line in self.lines.items() if line.switchable]

    def base_closed(self) -> set[str]:
        return {l for l in self.switchable if not self.lines[l].normally_open}

    def segment(self, seg_id: str) -> LineSegment:
        for seg in self.segments:
            if seg.id == seg_id:
                return seg
        raise KeyError(seg_id)

    @property
    def feeder_segments(self) -> list[LineSegment]:
        return [s for s in self.segments if s.kind == "feeder"]

    @property
    def transformer_segments(self) -> list[LineSegment]:
        return [s for s in self.segments if s.kind == "transformer"]

    def total_load_kw(self) -> float:
        return float(sum(n.p_max.sum() for n in self.nodes.values()))

    def neighbours(self, node_id: str) -> list[str]:
        out = []
        for line in self.lines.values():
            if line.from_node == node_id:
                out.append(line.to_node)
            elif line.to_node == node_id:
                out.append(line.from_node)
        return out


def equivalent_impedance(r: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Phase-coupled resistance/reactance used by the linear voltage-drop equation.

    Mutual terms are rotated by the 120 degree phase shift between phases, so
    ``V_i - V_j = 2 (r_hat P + x_hat Q)`` holds for unbalanced three-phase flow.
    """
    a = np.exp(-2j * np.pi / 3)
    gamma = np.array([[1, a**2, a], [a, 1, a**2], [a**2, a, 1]])
    zc = gamma * (np.asarray(r) - 1j * np.asarray(x))
    return zc.real, -zc.imag


def _vec3(values, phases: str, name: str, node_id: str) -> np.ndarray:
    arr = np.zeros(3)
    values = list(values) if values is not None else []
    if len(values) == 3:
        arr[:] = values
    elif len(values) == len(phases):
        for ph, v in zip(phases, values):
            arr[PHASES.index(ph)] = v
    elif values:
        raise NetworkError(f"node {node_id}: field '{name}' needs 3 or {len(phases)} entries")
    for i, ph in enumerate(PHASES):
        if ph not in phases and arr[i] != 0:
            raise NetworkError(f"node {node_id}: field '{name}' nonzero on absent phase {ph}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise NetworkError(f"node {node_id}: field '{name}' must be finite and >= 0")
    return arr


def _mat3(values, name: str, line_id: str) -> np.ndarray:
    try:
        m = np.asarray(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise NetworkError(f"line {line_id}: field '{name}' is not numeric") from exc
    if m.shape != (3, 3):
        raise NetworkError(f"line {line_id}: field '{name}' must be 3x3")
    if not np.allclose(m, m.T):
        raise NetworkError(f"line {line_id}: field '{name}' must be symmetric")
    if np.any(np.diag(m) < 0):
        raise NetworkError(f"line {line_id}: field '{name}' has negative diagonal")
    return m


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise NetworkError(f"{where}: missing field '{key}'")
    return obj[key]


def network_from_dict(doc: dict, name: str = "") -> Network:
    if doc.get("version") != 1:
        raise NetworkError("unsupported or missing 'version' (expected 1)")
    nodes: dict[str, Node] = {}
    for raw in _require(doc, "nodes", "network"):
        nid = str(_require(raw, "id", "node"))
        if nid in nodes:
            raise NetworkError(f"duplicate node id {nid}")
        phases = "".join(ph for ph in PHASES if ph in str(_require(raw, "phases", f"node {nid}")))
        if not phases:
            raise NetworkError(f"node {nid}: no valid phases")
        weight = float(raw.get("weight", 1.0))
        if weight <= 0:
            raise NetworkError(f"node {nid}: weight must be > 0")
        src = raw.get("source")
        p_cap = q_cap = None
        if src is not None:
            p_cap = _vec3(_require(src, "p_cap", f"node {nid} source"), phases, "source.p_cap", nid)
            q_cap = _vec3(_require(src, "q_cap", f"node {nid} source"), phases, "source.q_cap", nid)
            if np.any(p_cap[[PHASES.index(p) for p in phases]] <= 0):
                raise NetworkError(f"node {nid}: source capacity must be positive")
        nodes[nid] = Node(
            id=nid,
            phases=phases,
            p_max=_vec3(raw.get("p_max"), phases, "p_max", nid),
            q_max=_vec3(raw.get("q_max"), phases, "q_max", nid),
            weight=weight,
            is_source=src is not None,
            source_p_cap=p_cap,
            source_q_cap=q_cap,
            transformer=bool(raw.get("transformer", False)),
        )

    lines: dict[str, Line] = {}
    for raw in _require(doc, "lines", "network"):
        lid = str(_require(raw, "id", "line"))
        if lid in lines:
            raise NetworkError(f"duplicate line id {lid}")
        kind = _require(raw, "kind", f"line {lid}")
        if kind not in LINE_KINDS:
            raise NetworkError(f"line {lid}: unknown kind '{kind}'")
        fr, to = str(_require(raw, "from", f"line {lid}")), str(_require(raw, "to", f"line {lid}"))
        for end in (fr, to):
            if end not in nodes:
                raise NetworkError(f"line {lid}: unknown node '{end}'")
        if fr == to:
            raise NetworkError(f"line {lid}: device must join two distinct nodes (degree != 2)")
        r = _mat3(raw.get("r", np.zeros((3, 3))), "r", lid)
        x = _mat3(raw.get("x", np.zeros((3, 3))), "x", lid)
        common = [PHASES.index(p) for p in PHASES if p in nodes[fr].phases and p in nodes[to].phases]
        if not common:
            raise NetworkError(f"line {lid}: endpoints share no phase")
        if kind != "wire":
            # near-zero impedance keeps the drop equations well conditioned
            for i in common:
                r[i, i] = max(r[i, i], SWITCH_EPS)
                x[i, i] = max(x[i, i], SWITCH_EPS)
        i_max = float(raw.get("i_max", 0.0 if kind != "wire" else -1.0))
        if kind == "wire" and i_max <= 0:
            raise NetworkError(f"line {lid}: wires need i_max > 0")
        lines[lid] = Line(
            id=lid, from_node=fr, to_node=to, kind=kind, r=r, x=x,
            i_max=i_max if i_max > 0 else 1e3,
            length_mi=float(raw.get("length_mi", 0.0)),
            normally_open=bool(raw.get("normally_open", False)),
        )

    geo = doc.get("geo", {})
    net = Network(
        nodes=nodes, lines=lines,
        no_underground=frozenset(geo.get("no_underground", [])),
        no_pole=frozenset(geo.get("no_pole", [])),
        name=name or doc.get("name", ""),
    )
    if not net.sources:
        raise NetworkError("network has no source node")
    _check_base_topology(net)
    net.segments = derive_segments(net, doc.get("harden_costs", {}))
    return net


def load_network(path) -> Network:
    """Read and validate a network JSON document."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path) as fh:
        doc = json.load(fh)
    return network_from_dict(doc, name=path.stem)


def builtin_network(name: str) -> Network:
    return load_network(Path(__file__).parent / "data" / f"{name}.json")


def _check_base_topology(net: Network) -> None:
    wires = [l for l in net.lines.values() if l.kind == "wire"]
    if _has_cycle(net.nodes, wires):
        raise NetworkError("non-radial base topology: cycle among hard-wired lines")
    closed = [l for l in net.lines.values() if not l.normally_open]
    if _has_cycle(net.nodes, closed):
        raise NetworkError("non-radial base topology")
    owner = _energize(net, net.base_closed())
    orphans = sorted(n for n in net.nodes if owner.get(n) is None)
    if orphans:
        raise NetworkError(f"orphan node(s) not reachable from any source: {orphans}")


def _has_cycle(nodes, lines) -> bool:
    parent = {n: n for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for line in lines:
        ra, rb = find(line.from_node), find(line.to_node)
        if ra == rb:
            return True
        parent[ra] = rb
    return False


def _adjacency(net: Network, closed: set[str]) -> dict:
    adj = defaultdict(list)
    for lid, line in net.lines.items():
        if line.kind == "wire" or lid in closed:
            adj[line.from_node].append((line.to_node, lid))
            adj[line.to_node].append((line.from_node, lid))
    return adj


def _energize(net: Network, closed: set[str], dead: set[str] = frozenset()) -> dict:
    """Map each node to the source feeding it (None when de-energized or fed twice)."""
    adj = _adjacency(net, closed)
    owner: dict[str, str | None] = {}
    for src in net.sources:
        if src in dead:
            continue
        queue = deque([src])
        seen = {src}
        while queue:
            n = queue.popleft()
            if n in owner and owner[n] != src:
                owner[n] = None
                continue
            owner[n] = src
            for m, _ in adj[n]:
                if m not in seen and m not in dead:
                    seen.add(m)
                    queue.append(m)
    return owner


def energized_nodes(net: Network, closed: set[str]) -> dict:
    """Node -> feeding source for every node connected to a source through closed lines."""
    return {n: s for n, s in _energize(net, set(closed)).items() if s is not None}


def validate_radiality(net: Network, closed_switches) -> bool:
    """True iff the energized graph is a forest with exactly one source per tree."""
    closed = set(closed_switches)
    unknown = closed - set(net.switchable)
    if unknown:
        raise NetworkError(f"unknown switch ids {sorted(unknown)}")
    adj = _adjacency(net, closed)
    reach = set()
    for src in net.sources:
        stack = [src]
        reach.add(src)
        while stack:
            n = stack.pop()
            for m, _ in adj[n]:
                if m not in reach:
                    reach.add(m)
                    stack.append(m)
    edges = [
        l for lid, l in net.lines.items()
        if (l.kind == "wire" or lid in closed) and l.from_node in reach and l.to_node in reach
    ]
    n_src = sum(1 for s in net.sources if s in reach)
    if len(edges) != len(reach) - n_src:
        return False
    return not _has_cycle({n: None for n in reach}, edges)


def derive_segments(net: Network, harden_costs: dict | None = None) -> list[LineSegment]:
    """Partition main-feeder wires into protection zones plus one zone per transformer.

    Zones are the connected components of the wire graph; every non-wire line
    touching a zone is one of its boundary devices. A source bus with no wire
    attached (the substation side of the head breaker) belongs to no zone.
    """
    harden_costs = harden_costs or {}
    for line in net.lines.values():
        if line.from_node == line.to_node:
            raise NetworkError(f"line {line.id}: device must join two distinct nodes")
    wires = [l for l in net.lines.values() if l.kind == "wire"]
    parent = {n: n for n in net.nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for w in wires:
        parent[find(w.from_node)] = find(w.to_node)
    groups = defaultdict(set)
    for n in net.nodes:
        groups[find(n)].add(n)

    feeder = []
    for members in groups.values():
        mlines = frozenset(w.id for w in wires if w.from_node in members)
        if not mlines:
            if any(net.nodes[n].is_source for n in members):
                continue
            seg_id = f"bus:{min(members)}"
        else:
            seg_id = f"seg:{min(mlines)}"
        boundary = frozenset(
            l.id for l in net.lines.values()
            if l.kind != "wire" and (l.from_node in members or l.to_node in members)
        )
        length = sum(net.lines[l].length_mi for l in mlines)
        costs = harden_costs.get(seg_id, {})
        feeder.append(LineSegment(
            id=seg_id, kind="feeder", member_lines=mlines, member_nodes=frozenset(members),
            boundary_devices=boundary, length_mi=length,
            cost_pl=float(costs.get("pl", POLE_COST_PER_MI * length)),
            cost_ud=float(costs.get("ud", UNDERGROUND_COST_PER_MI * length)),
        ))
    feeder.sort(key=lambda s: (s.id.startswith("bus:"), min(s.member_lines) if s.member_lines else s.id))

    xfmr = []
    for nid in sorted(n for n, node in net.nodes.items() if node.transformer):
        seg_id = f"xfmr:{nid}"
        costs = harden_costs.get(seg_id, {})
        xfmr.append(LineSegment(
            id=seg_id, kind="transformer", member_lines=frozenset(), member_nodes=frozenset([nid]),
            boundary_devices=frozenset(), cost_pd=float(costs.get("pd", PADMOUNT_COST)),
        ))
    return feeder + xfmr


def synthetic_feeder(n_segments: int, n_transformers: int, seed: int = 0, n_ties: int = 1) -> dict:
    """Random radial feeder document: one two-bus zone per segment behind a protection device."""
    rng = np.random.default_rng(seed)
    r0 = [[0.0080, 0.0030, 0.0030], [0.0030, 0.0080, 0.0030], [0.0030, 0.0030, 0.0080]]
    x0 = [[0.0160, 0.0060, 0.0060], [0.0060, 0.0160, 0.0060], [0.0060, 0.0060, 0.0160]]
    nodes = [{"id": "S", "phases": "abc", "p_max": [0, 0, 0], "q_max": [0, 0, 0],
              "source": {"p_cap": [2000, 2000, 2000], "q_cap": [1500, 1500, 1500]}}]
    lines = []
    heads, tails = [], []
    for k in range(n_segments):
        a, b = f"N{k:03d}a", f"N{k:03d}b"
        for nid in (a, b):
            load = rng.uniform(5, 40)
            nodes.append({"id": nid, "phases": "abc", "p_max": [load] * 3, "q_max": [0.5 * load] * 3,
                          "weight": float(rng.choice([1.0, 1.0, 2.0]))})
        length = float(rng.uniform(0.2, 2.0))
        lines.append({"id": f"W{k:03d}", "from": a, "to": b, "kind": "wire", "r": r0, "x": x0,
                      "i_max": 4.0, "length_mi": round(length, 3)})
        parent = "S" if k == 0 else str(rng.choice(heads + tails))
        kind = "breaker" if k == 0 else str(rng.choice(["recloser", "fuse"]))
        lines.append({"id": f"D{k:03d}", "from": parent, "to": a, "kind": kind})
        heads.append(a)
        tails.append(b)
    xf = rng.choice(len(nodes) - 1, size=min(n_transformers, len(nodes) - 1), replace=False) + 1
    for idx in xf:
        nodes[idx]["transformer"] = True
    for t in range(n_ties if len(tails) >= 2 else 0):
        i, j = rng.choice(len(tails), size=2, replace=False)
        lines.append({"id": f"T{t:03d}", "from": tails[i], "to": tails[j], "kind": "switch",
                      "normally_open": True})
    return {"version": 1, "name": f"synthetic{n_segments}", "nodes": nodes, "lines": lines,
            "harden_costs": {}, "geo": {"no_underground": [], "no_pole": []}}
