"""Giant-step and baby-step bound training, bound checks and explanations."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from .data_model import Dataset, RelationshipGraph, nearest_neighbors
from .switchboard import UNSEEN, Kind, LinearizedStateGroup, encode_state, linearize

log = logging.getLogger(__name__)


class TrainingDataError(ValueError):
    """Training data violates the attack-free, finite-readings assumption."""


class Breach(str, Enum):
    NONE = "None"
    BELOW_LB = "BelowLB"
    ABOVE_UB = "AboveUB"
    UNSEEN_STATE = "UnseenState"
    NON_FINITE = "NonFinite"
    NOT_APPLICABLE = "NotApplicable"


ANOMALOUS_BREACHES = frozenset({Breach.BELOW_LB, Breach.ABOVE_UB, Breach.UNSEEN_STATE, Breach.NON_FINITE})


@dataclass(frozen=True)
class BoundEntry:
    sensor: str
    sb: str
    lb: float
    ub: float
    kind: Kind
    sample_count: int

    def __post_init__(self):
        if not self.lb <= self.ub:
            raise ValueError(f"lb {self.lb} > ub {self.ub}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    @property
    def key(self) -> Tuple[Kind, str, str]:
        return (self.kind, self.sensor, self.sb)


class BoundStore:
    """Trained [lb, ub] per (kind, sensor, switchboard state).

    Lookups are one dict access; absent keys mean the state was never seen.
    """

    def __init__(self, entries: Iterable[BoundEntry] = (), source: str = ""):
        self._entries: Dict[Tuple[Kind, str, str], BoundEntry] = {}
        self.source = source
        for e in entries:
            self.add(e)

    def add(self, entry: BoundEntry) -> None:
        if entry.sb == UNSEEN:
            raise ValueError("UNSEEN cannot be stored as a trained state")
        if entry.key in self._entries:
            raise KeyError(f"duplicate bound entry {entry.key}")
        self._entries[entry.key] = entry

    def update(self, entries: Iterable[BoundEntry]) -> None:
        for e in entries:
            self.add(e)

    def get(self, kind: Kind, sensor: str, sb: str) -> Optional[BoundEntry]:
        return self._entries.get((kind, sensor, sb))

    def slice(self, kind: Kind, sensor: str) -> Dict[str, BoundEntry]:
        return {e.sb: e for e in self._entries.values() if e.kind == kind and e.sensor == sensor}

    def sensors(self) -> List[str]:
        return sorted({e.sensor for e in self._entries.values()})

    def __iter__(self) -> Iterator[BoundEntry]:
        return iter(sorted(self._entries.values(), key=lambda e: (e.kind.value, e.sensor, e.sb)))

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoundStore):
            return NotImplemented
        return self._entries == other._entries

    def weakly_trained(self, min_count: int) -> List[BoundEntry]:
        return [e for e in self if e.sample_count < min_count]

    def promote(self, verdicts: Iterable["Verdict"]) -> "BoundStore":
        """Widen bounds so reviewed false-positive verdicts become normal.

        Unseen states reported by a verdict are added as degenerate entries.
        Non-finite and extended-window verdicts are ignored.
        """
        entries = dict(self._entries)
        for v in verdicts:
            if v.window_len is not None or v.breach not in (Breach.BELOW_LB, Breach.ABOVE_UB, Breach.UNSEEN_STATE):
                continue
            if v.sb == UNSEEN or not math.isfinite(v.observed):
                continue
            key = (v.kind, v.sensor, v.sb)
            old = entries.get(key)
            if old is None:
                entries[key] = BoundEntry(v.sensor, v.sb, v.observed, v.observed, v.kind, 1)
            else:
                entries[key] = replace(old, lb=min(old.lb, v.observed), ub=max(old.ub, v.observed),
                                       sample_count=old.sample_count + 1)
        return BoundStore(entries.values(), source=self.source)


@dataclass(frozen=True)
class Verdict:
    """Outcome of one check. ``lb``/``ub`` are None when no bounds apply.

    For extended checks ``observed`` is the window product and ``window_len``
    is set.
    """

    sensor: str
    index: int
    sb: str
    observed: float
    breach: Breach
    kind: Kind
    lb: Optional[float] = None
    ub: Optional[float] = None
    window_len: Optional[int] = None
    detail: str = ""

    @property
    def anomalous(self) -> bool:
        return self.breach in ANOMALOUS_BREACHES

    @property
    def detector(self) -> str:
        return f"{self.kind.value}-extended" if self.window_len is not None else self.kind.value

    def to_dict(self) -> dict:
        return {
            "anomalous": self.anomalous,
            "sensor": self.sensor,
            "index": self.index,
            "sb": self.sb,
            "kind": self.kind.value,
            "detector": self.detector,
            "window_len": self.window_len,
            "observed": _json_float(self.observed),
            "lb": _json_float(self.lb),
            "ub": _json_float(self.ub),
            "breach": self.breach.value,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        def num(x):
            return None if x is None else float(x)

        return cls(sensor=d["sensor"], index=int(d["index"]), sb=d["sb"], observed=float(d["observed"]),
                   breach=Breach(d["breach"]), kind=Kind(d["kind"]), lb=num(d.get("lb")), ub=num(d.get("ub")),
                   window_len=d.get("window_len"), detail=d.get("detail", ""))


def _json_float(x: Optional[float]):
    # JSON has no NaN/Infinity; strings keep the stream strictly valid.
    if x is None:
        return None
    if math.isfinite(x):
        return x
    return repr(x)


def determine_bounds(group: LinearizedStateGroup, kind: Kind) -> Optional[BoundEntry]:
    """Inclusive min/max of a group's values; None for an empty group."""
    if len(group) == 0:
        return None
    vals = group.values
    if not np.all(np.isfinite(vals)):
        raise TrainingDataError(f"non-finite training value for {group.sensor} in state {group.sb}")
    return BoundEntry(group.sensor, group.sb, float(vals.min()), float(vals.max()), Kind(kind), len(vals))


def _train(sensor: str, dataset: Dataset, graph: RelationshipGraph, kind: Kind) -> List[BoundEntry]:
    if not nearest_neighbors(sensor, graph):
        log.warning("sensor %s has no nn-actuators; skipped", sensor)
        return []
    if not np.all(np.isfinite(dataset.reading(sensor))):
        raise TrainingDataError(f"non-finite readings for {sensor} in training data")
    groups = linearize(dataset, sensor, graph, kind)
    unseen = groups.pop(UNSEEN, None)
    if unseen is not None:
        log.warning("%s: %d training rows with illegal actuator states ignored", sensor, len(unseen))
    entries = []
    for sb in sorted(groups):
        e = determine_bounds(groups[sb], kind)
        if e is not None:
            entries.append(e)
    return entries


def giant_step_train(sensor: str, dataset: Dataset, graph: RelationshipGraph) -> List[BoundEntry]:
    """Bounds on the raw readings, one entry per seen switchboard state."""
    return _train(sensor, dataset, graph, Kind.GIANT)


def baby_step_train(sensor: str, dataset: Dataset, graph: RelationshipGraph) -> List[BoundEntry]:
    """Bounds on one-step differences, one entry per seen switchboard state."""
    return _train(sensor, dataset, graph, Kind.BABY)


def bounds_check(index: int, sensor: str, value: float, sb: str, store: BoundStore, kind: Kind,
                 epsilon: float = 0.0) -> Verdict:
    kind = Kind(kind)
    if sb == UNSEEN:
        return Verdict(sensor, index, sb, value, Breach.UNSEEN_STATE, kind, detail="invalid actuator state")
    entry = store.get(kind, sensor, sb)
    if entry is None:
        return Verdict(sensor, index, sb, value, Breach.UNSEEN_STATE, kind, detail="state not seen in training")
    lb, ub = entry.lb, entry.ub
    if not math.isfinite(value):
        return Verdict(sensor, index, sb, value, Breach.NON_FINITE, kind, lb, ub, detail="non-finite reading")
    if value < lb - epsilon:
        breach = Breach.BELOW_LB
    elif value > ub + epsilon:
        breach = Breach.ABOVE_UB
    else:
        breach = Breach.NONE
    return Verdict(sensor, index, sb, value, breach, kind, lb, ub)


def _record_sb(dataset: Dataset, pos: int, sensor: str, graph: RelationshipGraph) -> str:
    acts = nearest_neighbors(sensor, graph)
    states = [int(dataset.columns[a][pos]) for a in acts]
    return encode_state(states, [graph.domains[a] for a in acts])


def giant_step_test(index: int, sensor: str, dataset: Dataset, graph: RelationshipGraph,
                    store: BoundStore, epsilon: float = 0.0) -> Verdict:
    pos = dataset.position(index)
    value = float(dataset.reading(sensor)[pos])
    return bounds_check(index, sensor, value, _record_sb(dataset, pos, sensor, graph), store, Kind.GIANT, epsilon)


def baby_step_test(index: int, sensor: str, dataset: Dataset, graph: RelationshipGraph,
                   store: BoundStore, epsilon: float = 0.0) -> Verdict:
    pos = dataset.position(index)
    sb = _record_sb(dataset, pos, sensor, graph)
    readings = dataset.reading(sensor)
    if pos == 0:
        return Verdict(sensor, index, sb, math.nan, Breach.NOT_APPLICABLE, Kind.BABY,
                       detail="no previous reading")
    value = float(readings[pos]) - float(readings[pos - 1])
    return bounds_check(index, sensor, value, sb, store, Kind.BABY, epsilon)


def _fmt(x: float, precision: int, spec: str = "f") -> str:
    return f"{x:.{precision}{spec}}" if math.isfinite(x) else repr(x)


def render_explanation(verdict: Verdict, precision: int = 4) -> Tuple[str, dict]:
    """Human sentence plus the structured record carrying the same fields."""
    v = verdict
    if v.breach is Breach.NONE:
        text = "No anomaly was detected."
    elif v.breach is Breach.NOT_APPLICABLE:
        text = f"No check for sensor {v.sensor} at time index {v.index}: {v.detail or 'not applicable'}."
    else:
        head = f"Anomaly DETECTED for sensor {v.sensor} at time index {v.index} for actuation state {v.sb} because "
        if v.breach is Breach.UNSEEN_STATE:
            text = head + f"actuation state is invalid or not seen in training ({v.detail or 'sb = -1'})"
        elif v.breach is Breach.NON_FINITE:
            text = head + f"sensor value {_fmt(v.observed, precision)} is not a finite reading"
        elif v.window_len is not None:
            # Window products span many decades; fixed-point would print zeros.
            text = (head + f"sliding window product (length {v.window_len}) {_fmt(v.observed, precision, 'g')} "
                    f"not in [{_fmt(v.lb, precision, 'g')},{_fmt(v.ub, precision, 'g')}]")
        else:
            text = (head + f"sensor value {_fmt(v.observed, precision)} "
                    f"not in [{_fmt(v.lb, precision)},{_fmt(v.ub, precision)}]")
    record = v.to_dict()
    record["explanation"] = text
    return text, record
