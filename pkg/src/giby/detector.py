"""Whole-plant training and the streaming per-record detector."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .core import Breach, BoundStore, Verdict, baby_step_train, bounds_check, giant_step_train
from .data_model import Dataset, RelationshipGraph, nearest_neighbors
from .extended import DEFAULT_WINDOWS, ExtendedMonitor, ExtendedStore, extended_train
from .switchboard import DELIMITER, UNSEEN, Kind

log = logging.getLogger(__name__)

DETECTORS = ("giant", "baby", "extended")


def core_kinds(detectors: Sequence[str]) -> Tuple[Kind, ...]:
    return tuple(Kind(d) for d in DETECTORS[:2] if d in detectors)


def extended_kinds(detectors: Sequence[str]) -> Tuple[Kind, ...]:
    """Series the extended detector runs on: the selected core kinds, or both."""
    if "extended" not in detectors:
        return ()
    return core_kinds(detectors) or (Kind.GIANT, Kind.BABY)


@dataclass
class TrainingResult:
    core: BoundStore
    extended: Optional[ExtendedStore]
    seconds: Dict[str, float] = field(default_factory=dict)


def train(dataset: Dataset, graph: RelationshipGraph, sensors: Optional[Sequence[str]] = None,
          detectors: Sequence[str] = DETECTORS, window_lens: Sequence[int] = DEFAULT_WINDOWS,
          quantize: Optional[int] = None) -> TrainingResult:
    """Train every selected detector for every sensor with nn-actuators."""
    if sensors is None:
        sensors = [s for s in graph.sensors if s in dataset.schema.columns]
    core = BoundStore()
    ext = ExtendedStore(window_lens, quantize) if "extended" in detectors else None
    seconds: Dict[str, float] = {}
    for s in sensors:
        if not nearest_neighbors(s, graph):
            log.warning("sensor %s has no nn-actuators; skipped", s)
            continue
        t0 = time.perf_counter()
        if "giant" in detectors:
            core.update(giant_step_train(s, dataset, graph))
        if "baby" in detectors:
            core.update(baby_step_train(s, dataset, graph))
        if ext is not None:
            for kind in extended_kinds(detectors):
                ext.add_training(extended_train(s, dataset, graph, kind, window_lens, quantize))
        seconds[s] = time.perf_counter() - t0
    return TrainingResult(core, ext, seconds)


class Detector:
    """Checks records one at a time against trained stores.

    Keeps the previous reading of each sensor for the baby step and the
    sliding windows of the extended detector, so records must arrive in time
    order. Per-record cost is a dict lookup per sensor plus the window updates.
    """

    def __init__(self, graph: RelationshipGraph, core: BoundStore, extended: Optional[ExtendedStore] = None,
                 sensors: Optional[Sequence[str]] = None, detectors: Sequence[str] = DETECTORS,
                 window_lens: Optional[Sequence[int]] = None, epsilon: float = 0.0):
        self.graph = graph
        self.core = core
        self.sensors = list(sensors) if sensors is not None else [s for s in graph.sensors if graph.neighbors[s]]
        self.kinds = core_kinds(detectors)
        self.ext_kinds = extended_kinds(detectors) if extended is not None else ()
        self.epsilon = epsilon
        self.monitor = ExtendedMonitor(extended, window_lens) if extended is not None else None
        self._acts = {s: nearest_neighbors(s, graph) for s in self.sensors}
        self._domains = {s: tuple(frozenset(graph.domains[a]) for a in self._acts[s]) for s in self.sensors}
        self._sb_cache: Dict[Tuple[str, Tuple[int, ...]], str] = {}
        self._prev: Dict[str, float] = {}

    def reset(self) -> None:
        self._prev.clear()
        if self.monitor is not None:
            self.monitor.reset()

    def switchboard(self, sensor: str, values: Mapping[str, float]) -> str:
        states = tuple(int(values[a]) for a in self._acts[sensor])
        key = (sensor, states)
        sb = self._sb_cache.get(key)
        if sb is None:
            ok = all(st in dom for st, dom in zip(states, self._domains[sensor]))
            sb = DELIMITER.join(map(str, states)) if ok else UNSEEN
            self._sb_cache[key] = sb
        return sb

    def check(self, index: int, values: Mapping[str, float]) -> List[Verdict]:
        """All verdicts for one record, across sensors and detectors."""
        out: List[Verdict] = []
        for s in self.sensors:
            out.extend(self.check_sensor(index, s, values))
        return out

    def check_sensor(self, index: int, sensor: str, values: Mapping[str, float]) -> List[Verdict]:
        sb = self.switchboard(sensor, values)
        value = float(values[sensor])
        prev = self._prev.get(sensor)
        self._prev[sensor] = value
        diff = None if prev is None else value - prev
        out = []
        for kind in self.kinds:
            if kind is Kind.GIANT:
                out.append(bounds_check(index, sensor, value, sb, self.core, kind, self.epsilon))
            elif diff is None:
                out.append(Verdict(sensor, index, sb, math.nan, Breach.NOT_APPLICABLE, kind,
                                   detail="no previous reading"))
            else:
                out.append(bounds_check(index, sensor, diff, sb, self.core, kind, self.epsilon))
        if self.monitor is not None:
            for kind in self.ext_kinds:
                if kind is Kind.GIANT:
                    out.extend(self.monitor.push(index, sensor, sb, value, kind))
                elif diff is not None:
                    out.extend(self.monitor.push(index, sensor, sb, diff, kind))
        return out

    def run(self, dataset: Dataset, emit_all: bool = False) -> Iterator[Verdict]:
        """Verdicts over a dataset in time order; only anomalous ones unless ``emit_all``."""
        cols = {c: dataset.columns[c].tolist() for c in dataset.schema.columns}
        names = list(cols)
        index = dataset.index.tolist()
        for i, t in enumerate(index):
            row = {c: cols[c][i] for c in names}
            for v in self.check(t, row):
                if emit_all or v.anomalous:
                    yield v
