"""Deterministic synthetic plant traces and labelled attack injection.

The plant is a single tank: a motorised inlet valve (MV101: close=1,
transition=0, open=2) fills it, a pump (P101: off=1, on=2) drains it into a
flow meter (FIT201), and a backup pump (P102) that never runs in normal
operation. Level and flow readings carry bounded uniform noise so trained
min/max bounds are finite.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data_model import Dataset, Label, RelationshipGraph, Schema
from .extended import DEFAULT_WINDOWS, LOG_SPACE_THRESHOLD, anom_probability

CORE_DETECTABLE = "CoreDetectable"
EXTENDED_DETECTABLE = "ExtendedDetectable"
UNDETECTABLE = "Undetectable"
DETECTABILITY = (CORE_DETECTABLE, EXTENDED_DETECTABLE, UNDETECTABLE)


class GenerationWarning(UserWarning):
    pass


def plant_graph() -> RelationshipGraph:
    return RelationshipGraph(
        {"LIT101": ("MV101", "P101"), "FIT201": ("P101", "P102")},
        {"MV101": (0, 1, 2), "P101": (1, 2), "P102": (1, 2)},
    )


PLANT_COLUMNS = ("LIT101", "FIT201", "MV101", "P101", "P102")


@dataclass
class PlantScenario:
    seed: int = 0
    duration: int = 2000
    level_noise: float = 0.5
    flow_noise: float = 0.05
    fill_rate: float = 2.0
    transition_fill: float = 1.0
    drain_rate: float = 1.2
    flow_on: float = 2.5
    low: float = 480.0
    high: float = 560.0
    initial_level: float = 520.0
    transition_steps: int = 3
    pump_dwell: Tuple[int, int] = (15, 90)
    decimals: int = 4
    min_combo_count: int = 1

    @classmethod
    def from_dict(cls, d: Mapping) -> "PlantScenario":
        known = {f for f in cls.__dataclass_fields__}
        kw = {k: v for k, v in d.items() if k in known}
        if "pump_dwell" in kw:
            kw["pump_dwell"] = tuple(kw["pump_dwell"])
        return cls(**kw)


def generate_normal(scenario: PlantScenario) -> Dataset:
    """A labelled-Normal trace; warns if a legal valve/pump combination never occurs."""
    sc = scenario
    rng = np.random.default_rng(sc.seed)
    n = sc.duration
    level = sc.initial_level
    mv, mv_target, mv_timer = 1, 1, 0
    pump = 1
    pump_timer = int(rng.integers(sc.pump_dwell[0], sc.pump_dwell[1] + 1))
    lit = np.empty(n)
    fit = np.empty(n)
    mv_col = np.empty(n, dtype=np.int64)
    p_col = np.empty(n, dtype=np.int64)
    for t in range(n):
        # Valve hysteresis with a transition state between close and open.
        if mv_timer > 0:
            mv_timer -= 1
            if mv_timer == 0:
                mv = mv_target
        elif mv == 1 and level < sc.low:
            mv, mv_target, mv_timer = 0, 2, sc.transition_steps
        elif mv == 2 and level > sc.high:
            mv, mv_target, mv_timer = 0, 1, sc.transition_steps
        pump_timer -= 1
        if pump_timer <= 0:
            pump = 2 if pump == 1 else 1
            pump_timer = int(rng.integers(sc.pump_dwell[0], sc.pump_dwell[1] + 1))

        inflow = {2: sc.fill_rate, 0: sc.transition_fill, 1: 0.0}[mv]
        outflow = sc.drain_rate if pump == 2 else 0.0
        level += inflow - outflow
        mv_col[t], p_col[t] = mv, pump
        lit[t] = round(level + rng.uniform(-sc.level_noise, sc.level_noise), sc.decimals)
        if pump == 2:
            fit[t] = round(sc.flow_on + rng.uniform(-sc.flow_noise, sc.flow_noise), sc.decimals)
        else:
            fit[t] = round(rng.uniform(0.0, sc.flow_noise), sc.decimals)

    graph = plant_graph()
    combos = list(zip(mv_col.tolist(), p_col.tolist()))
    for combo in itertools.product(graph.domains["MV101"], graph.domains["P101"]):
        seen = combos.count(combo)
        if seen < sc.min_combo_count:
            warnings.warn(f"LIT101 state {combo[0]}|{combo[1]} seen {seen} times "
                          f"(minimum {sc.min_combo_count})", GenerationWarning)
    schema = Schema(PLANT_COLUMNS, {a: graph.domains[a] for a in ("MV101", "P101", "P102")})
    cols = {"LIT101": lit, "FIT201": fit, "MV101": mv_col, "P101": p_col,
            "P102": np.ones(n, dtype=np.int64)}
    return Dataset(schema, np.arange(1, n + 1), cols, [Label.NORMAL] * n)


def generate_random(seed: int, n_rows: int, n_actuators: int = 2, n_sensors: int = 2,
                    switch_prob: float = 0.05, decimals: int = 2) -> Tuple[Dataset, RelationshipGraph]:
    """Random multi-state trace for oracle checks.

    Actuators hold a state with persistence and draw domains of 2-4 states;
    each sensor is a random walk whose drift depends on its nn-actuator tuple,
    rounded so that readings repeat.
    """
    rng = np.random.default_rng(seed)
    acts = [f"A{j + 1}" for j in range(n_actuators)]
    domains = {}
    for a in acts:
        size = int(rng.integers(2, 5))
        domains[a] = tuple(sorted(rng.choice(np.arange(0, 6), size=size, replace=False).tolist()))
    states = np.empty((n_rows, n_actuators), dtype=np.int64)
    cur = [int(rng.choice(domains[a])) for a in acts]
    for t in range(n_rows):
        for j, a in enumerate(acts):
            if rng.random() < switch_prob:
                cur[j] = int(rng.choice(domains[a]))
        states[t] = cur
    neighbors, cols = {}, {}
    for k in range(n_sensors):
        name = f"S{k + 1}"
        m = int(rng.integers(1, n_actuators + 1))
        nn = tuple(sorted(rng.choice(acts, size=m, replace=False).tolist()))
        neighbors[name] = nn
        idx = [acts.index(a) for a in nn]
        drift = (states[:, idx] - 1.5).sum(axis=1) * 0.1
        walk = 50.0 + np.cumsum(drift + rng.uniform(-1, 1, n_rows))
        cols[name] = np.round(walk, decimals)
    for j, a in enumerate(acts):
        cols[a] = states[:, j]
    columns = tuple(neighbors) + tuple(acts)
    schema = Schema(columns, domains)
    return Dataset(schema, np.arange(1, n_rows + 1), cols), RelationshipGraph(neighbors, domains)


class AttackKind(str, Enum):
    SPOOF_CONSTANT = "SpoofConstant"
    FREEZE = "Freeze"
    RAMP_DRIFT = "RampDrift"
    ACTUATOR_FLIP = "ActuatorFlip"
    UNSEEN_STATE_FORCE = "UnseenStateForce"


@dataclass
class AttackSpec:
    """One attack over time indices ``start`` (inclusive) to ``end`` (exclusive).

    ``value`` is the spoofed reading, frozen reading or forced actuator state.
    ``expected`` records the class the attack was designed for; the manifest
    keeps it as ``declared`` next to the class the oracle derives.
    """

    kind: AttackKind
    target: str
    start: int
    end: Optional[int] = None
    value: Optional[float] = None
    delta: Optional[float] = None
    tsteps: Optional[int] = None
    expected: Optional[str] = None
    id: Optional[str] = None

    def __post_init__(self):
        self.kind = AttackKind(self.kind)
        if self.kind is AttackKind.RAMP_DRIFT:
            if self.delta is None or not self.delta > 0:
                raise ValueError("RampDrift needs delta > 0")
            if self.end is None:
                if self.tsteps is None:
                    raise ValueError("RampDrift needs tsteps or end")
                self.end = self.start + self.tsteps
            if self.tsteps is None:
                self.tsteps = self.end - self.start
        if self.end is None:
            raise ValueError("attack needs an end index")
        if not self.start < self.end:
            raise ValueError(f"attack start {self.start} must precede end {self.end}")
        if self.kind in (AttackKind.SPOOF_CONSTANT, AttackKind.UNSEEN_STATE_FORCE) and self.value is None:
            raise ValueError(f"{self.kind.value} needs a value")
        if self.expected is not None and self.expected not in DETECTABILITY:
            raise ValueError(f"unknown detectability class {self.expected}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackSpec":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _reference_bounds(dataset: Dataset, sensor: str, acts: Sequence[str]):
    """Plain per-tuple min/max of readings and diffs, kept apart from the trainer."""
    vals = dataset.reading(sensor).tolist()
    rows = list(zip(*(dataset.columns[a].tolist() for a in acts)))
    giant: Dict[tuple, List[float]] = {}
    baby: Dict[tuple, List[float]] = {}
    for i, (v, tup) in enumerate(zip(vals, rows)):
        b = giant.setdefault(tup, [v, v])
        b[0], b[1] = min(b[0], v), max(b[1], v)
        if i:
            d = v - vals[i - 1]
            b = baby.setdefault(tup, [d, d])
            b[0], b[1] = min(b[0], d), max(b[1], d)
    return giant, baby


def _series(dataset: Dataset, sensor: str, acts: Sequence[str], quantize: Optional[int]):
    """Per kind and actuator tuple: (positions, values) in time order; diffs go to the later row."""
    vals = dataset.reading(sensor).tolist()
    rows = list(zip(*(dataset.columns[a].tolist() for a in acts)))
    out: Dict[str, Dict[tuple, Tuple[List[int], List[float]]]] = {"giant": {}, "baby": {}}
    for i, (v, tup) in enumerate(zip(vals, rows)):
        items = [("giant", v)] if not i else [("giant", v), ("baby", v - vals[i - 1])]
        for kind, x in items:
            pos, xs = out[kind].setdefault(tup, ([], []))
            pos.append(i)
            xs.append(x if quantize is None else round(x, quantize))
    return out


def _naive_probs(support: np.ndarray, values: Sequence[float]) -> np.ndarray:
    # Tail masses are plain strict-inequality counts over the clean readings.
    v = np.asarray(values, dtype=np.float64)
    total = len(support)
    below = np.searchsorted(support, v, side="left")
    above = total - np.searchsorted(support, v, side="right")
    out = np.zeros(len(v))
    for j in range(len(v)):
        if support[0] <= v[j] <= support[-1]:
            out[j] = 1.0 - anom_probability(below[j] / total, above[j] / total)
    return out


def _naive_scores(probs: np.ndarray, window_len: int) -> np.ndarray:
    """Every full window's product recomputed from scratch, in log space for long windows."""
    win = np.lib.stride_tricks.sliding_window_view(probs, window_len)
    if window_len <= LOG_SPACE_THRESHOLD:
        return np.prod(win, axis=1)
    with np.errstate(divide="ignore"):
        return np.log(win).sum(axis=1)


class DetectabilityOracle:
    """Predicts which detector class should catch an attack, from the clean trace alone.

    Bounds and window extremes are recomputed by brute force here rather than
    taken from the trainer, so manifests cross-check the streaming detector.
    """

    def __init__(self, reference: Dataset, graph: RelationshipGraph,
                 window_lens: Sequence[int] = DEFAULT_WINDOWS, quantize: Optional[int] = None):
        self.graph = graph
        self.window_lens = tuple(window_lens)
        self.quantize = quantize
        self.sensors = [s for s, acts in graph.neighbors.items() if acts and s in reference.schema.columns]
        self.core = {s: _reference_bounds(reference, s, graph.neighbors[s]) for s in self.sensors}
        self.support: Dict[tuple, np.ndarray] = {}
        self.extremes: Dict[tuple, Tuple[float, float]] = {}
        for s in self.sensors:
            for kind, groups in _series(reference, s, graph.neighbors[s], quantize).items():
                for tup, (_, xs) in groups.items():
                    support = np.sort(np.asarray(xs, dtype=np.float64))
                    self.support[(s, kind, tup)] = support
                    probs = _naive_probs(support, xs)
                    for L in self.window_lens:
                        if L <= len(probs):
                            sc = _naive_scores(probs, L)
                            self.extremes[(s, kind, tup, L)] = (float(sc.min()), float(sc.max()))

    def core_evidence(self, attacked: Dataset, positions: Sequence[int]) -> Optional[dict]:
        """First affected position where the min/max bounds would be breached."""
        for sensor in self.sensors:
            acts = self.graph.neighbors[sensor]
            giant, baby = self.core[sensor]
            vals = attacked.reading(sensor)
            for p in positions:
                tup = tuple(int(attacked.columns[a][p]) for a in acts)
                t = int(attacked.index[p])
                if tup not in giant:
                    return {"index": t, "sensor": sensor, "reason": "unseen state"}
                lo, hi = giant[tup]
                if not lo <= vals[p] <= hi:
                    return {"index": t, "sensor": sensor, "reason": "giant"}
                if p:
                    d = float(vals[p]) - float(vals[p - 1])
                    if tup not in baby or not baby[tup][0] <= d <= baby[tup][1]:
                        return {"index": t, "sensor": sensor, "reason": "baby"}
        return None

    def extended_evidence(self, attacked: Dataset, positions: Sequence[int]) -> Optional[dict]:
        """First affected position where a window product leaves its clean extremes.

        Windows run per (sensor, kind, tuple) over the whole attacked trace, the
        way a detector replaying it from the start sees them.
        """
        affected = np.asarray(sorted(positions), dtype=np.int64)
        best = None
        for sensor in self.sensors:
            for kind, groups in _series(attacked, sensor, self.graph.neighbors[sensor], self.quantize).items():
                for tup, (pos, xs) in groups.items():
                    support = self.support.get((sensor, kind, tup))
                    if support is None:
                        continue
                    hit = np.flatnonzero(np.isin(pos, affected))
                    if not len(hit):
                        continue
                    probs = _naive_probs(support, xs)
                    for L in self.window_lens:
                        ext = self.extremes.get((sensor, kind, tup, L))
                        if ext is None or len(probs) < L:
                            continue
                        sc = _naive_scores(probs, L)
                        for j in hit[hit >= L - 1]:
                            if not ext[0] <= sc[j - L + 1] <= ext[1]:
                                t = int(attacked.index[pos[j]])
                                if best is None or t < best["index"]:
                                    best = {"index": t, "sensor": sensor, "reason": f"{kind}-extended",
                                            "window_len": L}
                                break
        return best

    def classify(self, attacked: Dataset, positions: Sequence[int]) -> Tuple[str, Optional[dict]]:
        evidence = self.core_evidence(attacked, positions)
        if evidence is not None:
            return CORE_DETECTABLE, evidence
        evidence = self.extended_evidence(attacked, positions)
        if evidence is not None:
            return EXTENDED_DETECTABLE, evidence
        return UNDETECTABLE, None


def inject_attacks(dataset: Dataset, specs: Sequence[AttackSpec], graph: RelationshipGraph,
                   reference: Optional[Dataset] = None,
                   oracle: Optional[DetectabilityOracle] = None) -> Tuple[Dataset, dict]:
    """Overwrite readings/states per spec; returns the labelled dataset and a manifest.

    Each attack's detectability class is derived by ``oracle``, built from
    ``reference`` (the clean training data, default ``dataset``) when not
    given. A class declared on an AttackSpec is kept as ``declared``.
    """
    if oracle is None:
        oracle = DetectabilityOracle(dataset if reference is None else reference, graph)
    index = dataset.index
    last = int(index[-1]) if len(index) else 0
    spans = []
    for k, s in enumerate(specs):
        if s.target not in dataset.schema.columns:
            raise ValueError(f"attack target {s.target} not in dataset")
        if s.end > last + 1:
            raise ValueError(f"attack end {s.end} beyond dataset end {last}")
        for (t2, a2, b2) in spans:
            if t2 == s.target and s.start < b2 and a2 < s.end:
                raise ValueError(f"overlapping attacks on {s.target}")
        spans.append((s.target, s.start, s.end))

    cols = {c: dataset.columns[c].copy() for c in dataset.schema.columns}
    labels = [Label.NORMAL if lb is Label.UNLABELED else lb for lb in dataset.labels]
    entries = []
    for k, s in enumerate(specs):
        pos = np.flatnonzero((index >= s.start) & (index < s.end))
        col = cols[s.target]
        if s.kind is AttackKind.SPOOF_CONSTANT:
            col[pos] = s.value
        elif s.kind is AttackKind.FREEZE:
            if s.value is not None:
                held = s.value
            else:
                held = col[pos[0] - 1] if pos[0] > 0 else col[pos[0]]
            col[pos] = held
        elif s.kind is AttackKind.RAMP_DRIFT:
            col[pos] = col[pos] + s.delta * np.arange(1, len(pos) + 1)
        elif s.kind is AttackKind.ACTUATOR_FLIP:
            if s.value is not None:
                col[pos] = int(s.value)
            else:
                dom = graph.domains[s.target]
                col[pos] = [dom[(dom.index(int(x)) + 1) % len(dom)] for x in col[pos]]
        elif s.kind is AttackKind.UNSEEN_STATE_FORCE:
            col[pos] = int(s.value)
        for p in pos:
            labels[p] = Label.ATTACK
        entries.append((s, pos))

    attacked = Dataset(dataset.schema, index, cols, labels)
    manifest = {"attacks": []}
    for k, (s, pos) in enumerate(entries):
        expected, evidence = oracle.classify(attacked, pos.tolist())
        params = {key: val for key, val in (("value", s.value), ("delta", s.delta), ("tsteps", s.tsteps))
                  if val is not None}
        entry = {
            "id": s.id or f"attack-{k + 1}",
            "kind": s.kind.value,
            "target": s.target,
            "start": s.start,
            "end": s.end,
            "params": params,
            "indices": index[pos].tolist(),
            "expected": expected,
            "evidence": evidence,
        }
        if s.expected is not None:
            entry["declared"] = s.expected
        manifest["attacks"].append(entry)
    return attacked, manifest


def plan_stealth_ramp(dataset: Dataset, graph: RelationshipGraph, target: str, delta: float, tsteps: int,
                      oracle: Optional[DetectabilityOracle] = None,
                      candidates: Optional[Sequence[int]] = None,
                      others: Sequence[AttackSpec] = ()) -> Optional[AttackSpec]:
    """Earliest ramp launch that the oracle predicts every detector will miss.

    Models an attacker with the clean trace in hand who times a small drift
    so that no bound or window extreme is crossed. Candidate launches default
    to the indices where the target's nn-actuator state changes. ``others``
    are attacks injected alongside; launches overlapping them on the target
    are skipped and each candidate is classified with them in place, since
    their readings share the ramp's windows.
    """
    oracle = oracle or DetectabilityOracle(dataset, graph)
    if candidates is None:
        acts = graph.neighbors.get(target, ())
        states = dataset.states(acts) if acts else np.zeros((len(dataset), 0))
        change = np.flatnonzero(np.any(states[1:] != states[:-1], axis=1)) + 1
        candidates = dataset.index[change].tolist()
    last = int(dataset.index[-1]) if len(dataset) else 0
    for start in candidates:
        if start + tsteps > last + 1:
            break
        if any(o.target == target and start < o.end and o.start < start + tsteps for o in others):
            continue
        spec = AttackSpec(AttackKind.RAMP_DRIFT, target, int(start), delta=delta, tsteps=tsteps,
                          expected=UNDETECTABLE, id="stealth-ramp")
        _, manifest = inject_attacks(dataset, [*others, spec], graph, oracle=oracle)
        if manifest["attacks"][-1]["expected"] == UNDETECTABLE:
            return spec
    return None


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"
