"""Outage records, scenario catalog, label construction and a synthetic outage generator."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from .decision import DEFAULT_IMPROVEMENTS, HardeningDecision
from .network import Network

CSV_HEADER = ["id", "time", "clear_device", "duration_h", "wind_mph", "humidity_pct", "temp_c"]
WEATHER_FIELDS = ("wind_mph", "humidity_pct", "temp_c")
DEFAULT_DURATION_H = 2.0


class OutageDataError(ValueError):
    pass


@dataclass(frozen=True)
class OutageRecord:
    id: int
    time: str
    clear_device: str
    duration_h: float
    wind_mph: float
    humidity_pct: float
    temp_c: float

    def weather(self) -> np.ndarray:
        return np.array([self.wind_mph, self.humidity_pct, self.temp_c])


@dataclass(frozen=True)
class Scenario:
    index: int
    name: str
    fault_components: frozenset
    duration_h: float
    clear_device: str
    neighbours: tuple = ()

    def alpha(self, network: Network) -> dict:
        return {seg.id: 0 if seg.id in self.fault_components else 1 for seg in network.segments}


@dataclass
class TrainingInstance:
    h: np.ndarray
    c: np.ndarray
    o: np.ndarray
    label: np.ndarray
    decision: HardeningDecision | None = None


def _upstream_devices(network: Network) -> dict:
    """Segment id -> device through which the segment is fed in the base topology."""
    closed = network.base_closed()
    adj = defaultdict(list)
    for lid, line in network.lines.items():
        if line.kind == "wire" or lid in closed:
            adj[line.from_node].append((line.to_node, lid))
            adj[line.to_node].append((line.from_node, lid))
    via = {}
    for src in network.sources:
        via[src] = None
        queue = deque([src])
        while queue:
            n = queue.popleft()
            for m, lid in adj[n]:
                if m not in via:
                    via[m] = lid
                    queue.append(m)
    out = {}
    for seg in network.feeder_segments:
        devs = sorted({via[n] for n in seg.member_nodes if via.get(n) in seg.boundary_devices})
        out[seg.id] = devs[0] if devs else seg.id
    return out


def build_scenario_catalog(network: Network, records=None,
                           default_duration_h: float = DEFAULT_DURATION_H) -> list[Scenario]:
    """One scenario per feeder segment and per transformer, in segment order."""
    if not network.segments:
        raise OutageDataError("network has no segments")
    upstream = _upstream_devices(network)
    device_of = {}
    for seg in network.segments:
        device_of[seg.id] = upstream[seg.id] if seg.kind == "feeder" else seg.id

    durations = defaultdict(list)
    dev_to_seg = {d: s for s, d in device_of.items()}
    for rec in records or []:
        if rec.clear_device in dev_to_seg:
            durations[dev_to_seg[rec.clear_device]].append(rec.duration_h)

    node_seg = {}
    for seg in network.feeder_segments:
        for n in seg.member_nodes:
            node_seg[n] = seg.id
    nbrs = defaultdict(set)
    for a in network.feeder_segments:
        for b in network.feeder_segments:
            if a.id != b.id and a.boundary_devices & b.boundary_devices:
                nbrs[a.id].add(b.id)
    for t in network.transformer_segments:
        (node,) = t.member_nodes
        if node in node_seg:
            nbrs[t.id].add(node_seg[node])
            nbrs[node_seg[node]].add(t.id)

    index = {seg.id: i for i, seg in enumerate(network.segments)}
    catalog = []
    for i, seg in enumerate(network.segments):
        dur = float(np.mean(durations[seg.id])) if durations[seg.id] else default_duration_h
        catalog.append(Scenario(
            index=i, name=seg.id, fault_components=frozenset([seg.id]), duration_h=dur,
            clear_device=device_of[seg.id],
            neighbours=tuple(sorted(index[n] for n in nbrs[seg.id])),
        ))
    return catalog


def device_map(catalog) -> dict:
    return {s.clear_device: s.index for s in catalog}


def scenario_of(record: OutageRecord, catalog) -> int:
    dmap = device_map(catalog)
    if record.clear_device not in dmap:
        raise OutageDataError(f"record {record.id}: clearing device '{record.clear_device}' maps to no scenario")
    return dmap[record.clear_device]


def hardening_label(s: int, catalog, hardened: dict, improvements=DEFAULT_IMPROVEMENTS) -> np.ndarray:
    """Outage-occurrence label for scenario ``s`` under the hardened components.

    The realized scenario keeps mass prod(1 - I_z) over its hardened fault
    components; the rest is spread evenly over every other scenario.
    """
    n = len(catalog)
    keep = 1.0
    for z in catalog[s].fault_components:
        if z in hardened:
            imp = improvements[hardened[z]]
            if not 0.0 <= imp <= 1.0:
                raise OutageDataError(f"improvement {imp} outside [0, 1]")
            keep *= 1.0 - imp
    label = np.zeros(n)
    if n == 1:
        label[0] = 1.0
        return label
    label[:] = (1.0 - keep) / (n - 1)
    label[s] = keep
    return label


def translation_matrix(catalog, hardened: dict, improvements=DEFAULT_IMPROVEMENTS) -> np.ndarray:
    """Column s is the label of scenario s; maps a distribution under no hardening to one under ``hardened``."""
    return np.column_stack([hardening_label(s, catalog, hardened, improvements) for s in range(len(catalog))])


def construct_training_set(records, catalog, network: Network, decision: HardeningDecision,
                           improvements=DEFAULT_IMPROVEMENTS) -> list[TrainingInstance]:
    for v in improvements.values():
        if not 0.0 <= v <= 1.0:
            raise OutageDataError(f"improvement {v} outside [0, 1]")
    hardened = decision.hardened(network)
    bits = decision.bits(network)
    out = []
    dmap = device_map(catalog)
    for rec in records:
        if rec.clear_device not in dmap:
            raise OutageDataError(f"record {rec.id}: clearing device '{rec.clear_device}' maps to no scenario")
        s = dmap[rec.clear_device]
        o = np.zeros(len(catalog))
        o[s] = 1.0
        out.append(TrainingInstance(h=bits.copy(), c=rec.weather(), o=o,
                                    label=hardening_label(s, catalog, hardened, improvements),
                                    decision=decision))
    return out


def augment_dataset(instances, catalog, network: Network, noise_std_frac: float = 0.0,
                    swap_prob: float = 0.0, factor: int = 1, seed: int = 0,
                    improvements=DEFAULT_IMPROVEMENTS) -> list[TrainingInstance]:
    """Jitter weather with Gaussian noise and move outages to adjacent clearing devices.

    Returns ``factor`` perturbed copies of every instance, labels recomputed.
    """
    if not 0.0 <= swap_prob <= 1.0:
        raise OutageDataError("swap_prob must lie in [0, 1]")
    if not instances:
        return []
    rng = np.random.default_rng(seed)
    weather = np.array([inst.c for inst in instances])
    std = weather.std(axis=0) if len(instances) > 1 else np.zeros(weather.shape[1])
    out = []
    for _ in range(factor):
        for inst in instances:
            c = inst.c + rng.normal(0.0, 1.0, size=inst.c.shape) * noise_std_frac * std if noise_std_frac else inst.c.copy()
            s = int(np.argmax(inst.o))
            nb = catalog[s].neighbours
            if swap_prob and nb and rng.random() < swap_prob:
                s = int(nb[rng.integers(len(nb))])
            o = np.zeros(len(catalog))
            o[s] = 1.0
            if inst.decision is not None:
                label = hardening_label(s, catalog, inst.decision.hardened(network), improvements)
            elif s == int(np.argmax(inst.o)):
                label = inst.label.copy()
            else:
                raise OutageDataError("cannot recompute label without the instance's decision")
            out.append(TrainingInstance(h=inst.h.copy(), c=c, o=o, label=label, decision=inst.decision))
    return out


@dataclass
class GroundTruthModel:
    """Wind fragility per component plus Weibull wind and gamma duration distributions."""

    w0: dict
    k: dict
    wind_shape: float = 2.0
    wind_scale: float = 30.0
    duration_mean: dict = field(default_factory=dict)
    duration_shape: float = 4.0

    def __post_init__(self):
        for z, kz in self.k.items():
            if kz <= 0:
                raise OutageDataError(f"fragility slope for {z} must be > 0")

    def order(self, catalog) -> list[str]:
        return [s.name for s in catalog]

    def fail_weights(self, wind, catalog) -> np.ndarray:
        wind = np.atleast_1d(np.asarray(wind, dtype=float))
        w0 = np.array([self.w0[s.name] for s in catalog])
        k = np.array([self.k[s.name] for s in catalog])
        return expit((wind[:, None] - w0[None, :]) / k[None, :])

    def conditional_probs(self, wind, catalog) -> np.ndarray:
        w = self.fail_weights(wind, catalog)
        return w / w.sum(axis=1, keepdims=True)

    def scenario_probs(self, catalog) -> np.ndarray:
        """Closed-form scenario distribution, integrating over the wind density."""
        dist = stats.weibull_min(self.wind_shape, scale=self.wind_scale)
        hi = dist.ppf(1 - 1e-12)
        out = np.empty(len(catalog))
        for i in range(len(catalog)):
            out[i] = integrate.quad(
                lambda w: self.conditional_probs(w, catalog)[0, i] * dist.pdf(w), 0.0, hi,
                limit=200, epsabs=1e-12, epsrel=1e-10,
            )[0]
        return out / out.sum()

    def translated_probs(self, catalog, network: Network, decision: HardeningDecision,
                         improvements=DEFAULT_IMPROVEMENTS) -> np.ndarray:
        return translation_matrix(catalog, decision.hardened(network), improvements) @ self.scenario_probs(catalog)

    def to_dict(self) -> dict:
        return {"version": 1, "wind": {"shape": self.wind_shape, "scale": self.wind_scale},
                "duration_shape": self.duration_shape,
                "segments": {z: {"w0": self.w0[z], "k": self.k[z], "duration_h": self.duration_mean.get(z, DEFAULT_DURATION_H)}
                             for z in self.w0}}

    @classmethod
    def from_dict(cls, doc: dict) -> "GroundTruthModel":
        segs = doc["segments"]
        return cls(
            w0={z: float(v["w0"]) for z, v in segs.items()},
            k={z: float(v["k"]) for z, v in segs.items()},
            wind_shape=float(doc.get("wind", {}).get("shape", 2.0)),
            wind_scale=float(doc.get("wind", {}).get("scale", 30.0)),
            duration_mean={z: float(v.get("duration_h", DEFAULT_DURATION_H)) for z, v in segs.items()},
            duration_shape=float(doc.get("duration_shape", 4.0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "GroundTruthModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_truth(catalog, seed: int = 0) -> GroundTruthModel:
    rng = np.random.default_rng(seed)
    w0, k, dur = {}, {}, {}
    for s in catalog:
        w0[s.name] = float(np.round(rng.uniform(25.0, 60.0), 2))
        k[s.name] = float(np.round(rng.uniform(4.0, 10.0), 2))
        dur[s.name] = float(np.round(rng.uniform(1.0, 6.0), 2))
    return GroundTruthModel(w0=w0, k=k, duration_mean=dur)


def synth_generate(truth: GroundTruthModel, catalog, n_events: int, seed: int = 0) -> list[OutageRecord]:
    """Draw outage events; the faulted component is chosen with weight sigmoid((wind - w0)/k)."""
    if n_events <= 0:
        raise OutageDataError("n_events must be > 0")
    rng = np.random.default_rng(seed)
    wind = truth.wind_scale * rng.weibull(truth.wind_shape, size=n_events)
    probs = truth.conditional_probs(wind, catalog)
    u = rng.random(n_events)
    cum = np.cumsum(probs, axis=1)
    idx = np.minimum((u[:, None] > cum).sum(axis=1), len(catalog) - 1)
    means = np.array([truth.duration_mean.get(s.name, DEFAULT_DURATION_H) for s in catalog])[idx]
    dur = rng.gamma(truth.duration_shape, means / truth.duration_shape)
    hum = np.clip(rng.normal(70.0, 12.0, size=n_events), 5.0, 100.0)
    temp = rng.normal(18.0, 9.0, size=n_events)
    minutes = np.sort(rng.integers(0, 24 * 365 * 24 * 60, size=n_events))
    t0 = datetime(2001, 1, 1)
    out = []
    for i in range(n_events):
        out.append(OutageRecord(
            id=i + 1,
            time=(t0 + timedelta(minutes=int(minutes[i]))).strftime("%Y-%m-%d %H:%M"),
            clear_device=catalog[idx[i]].clear_device,
            duration_h=round(max(float(dur[i]), 0.01), 4),
            wind_mph=round(float(wind[i]), 3),
            humidity_pct=round(float(hum[i]), 2),
            temp_c=round(float(temp[i]), 2),
        ))
    return out


def write_records(records, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.id, r.time, r.clear_device, repr(r.duration_h), repr(r.wind_mph),
                        repr(r.humidity_pct), repr(r.temp_c)])
    finally:
        if own:
            fh.close()


def read_records(path_or_buf) -> list[OutageRecord]:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, newline="") if own else path_or_buf
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise OutageDataError(f"outage CSV header must be {','.join(CSV_HEADER)}")
        out = []
        for row in reader:
            rec = OutageRecord(int(row[0]), row[1], row[2], float(row[3]), float(row[4]), float(row[5]), float(row[6]))
            if rec.duration_h <= 0:
                raise OutageDataError(f"record {rec.id}: duration_h must be > 0")
            if not np.all(np.isfinite(rec.weather())):
                raise OutageDataError(f"record {rec.id}: weather fields must be finite")
            out.append(rec)
        return out
    finally:
        if own:
            fh.close()


def records_to_csv(records) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


def with_device(record: OutageRecord, device: str) -> OutageRecord:
    return replace(record, clear_device=device)
