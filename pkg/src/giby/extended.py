"""Extended detection: empirical not-anomaly probabilities and sliding-window products.

Each training reading gets a not-anomaly probability from the frequency
distribution of its linearized state group. Products of consecutive
probabilities over a sliding window are bounded by their training min/max;
a test window whose product leaves those bounds is anomalous.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import Breach, TrainingDataError, Verdict
from .data_model import Dataset, RelationshipGraph
from .switchboard import UNSEEN, Kind, LinearizedStateGroup, linearize

log = logging.getLogger(__name__)

DEFAULT_WINDOWS = (5, 10, 25, 50, 100)
# Windows longer than this keep their running product as a sum of logs.
LOG_SPACE_THRESHOLD = 64

_LN2 = math.log(2.0)


def quantize_value(x: float, digits: Optional[int]) -> float:
    return x if digits is None else round(x, digits)


def anom_probability(pr_l: float, pr_r: float) -> float:
    """Anomaly probability from the left/right tail masses.

    The branch ladder is evaluated in order and later overrides replace earlier
    results, so e.g. ``(0.3, 0.0)`` gives 0.3 rather than 1.
    """
    if not (0.0 <= pr_l <= 1.0 and 0.0 <= pr_r <= 1.0) or pr_l + pr_r > 1.0 + 1e-12:
        raise ValueError(f"tail probabilities out of range: left={pr_l}, right={pr_r}")
    if pr_l == 0 or pr_r == 0:
        p = 1.0
    elif pr_l != 0.5 and pr_r != 0.5:
        p = abs(0.5 - min(pr_l, pr_r)) * 2
    else:
        p = 0.5
    if pr_l + pr_r < 0.5:
        p = abs(pr_l + pr_r)
    if pr_r == 0 and pr_l != 1:
        p = pr_l
    elif pr_l == 0 and pr_r != 1:
        p = pr_r
    return p


def not_anom_probability(pr_l: float, pr_r: float) -> float:
    return 1.0 - anom_probability(pr_l, pr_r)


@dataclass(frozen=True)
class FrequencyTable:
    """Sorted unique values of a group with exact-equality counts.

    ``cum_below[i]`` / ``cum_above[i]`` count the readings strictly left/right
    of entry ``i``. Not-anomaly probabilities for exact hits and for values
    falling between two entries are precomputed.
    """

    sensor: str
    sb: str
    kind: Kind
    values: Tuple[float, ...]
    freqs: Tuple[int, ...]
    quantize: Optional[int] = None
    cum_below: Tuple[int, ...] = field(init=False)
    cum_above: Tuple[int, ...] = field(init=False)
    total: int = field(init=False)
    hit_probs: Tuple[float, ...] = field(init=False, repr=False)
    gap_probs: Tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.values:
            raise ValueError("frequency table needs at least one value")
        if len(self.values) != len(self.freqs):
            raise ValueError("values and freqs differ in length")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("table values must be strictly increasing")
        if any(f < 1 for f in self.freqs):
            raise ValueError("frequencies must be positive")
        freqs = [int(f) for f in self.freqs]
        total = sum(freqs)
        below, acc = [], 0
        for f in freqs:
            below.append(acc)
            acc += f
        above = [total - b - f for b, f in zip(below, freqs)]
        hits = tuple(not_anom_probability(b / total, a / total) for b, a in zip(below, above))
        # Between entries k and k+1 the test value takes the neighbours' mass on both sides.
        gaps = tuple(not_anom_probability(below[k + 1] / total, above[k] / total) for k in range(len(freqs) - 1))
        set_ = object.__setattr__
        set_(self, "values", tuple(float(v) for v in self.values))
        set_(self, "freqs", tuple(freqs))
        set_(self, "cum_below", tuple(below))
        set_(self, "cum_above", tuple(above))
        set_(self, "total", total)
        set_(self, "hit_probs", hits)
        set_(self, "gap_probs", gaps)

    def __len__(self) -> int:
        return len(self.values)

    def position(self, value: float) -> int:
        """1-based entry position of an exact table value."""
        v = quantize_value(value, self.quantize)
        i = bisect_left(self.values, v)
        if i == len(self.values) or self.values[i] != v:
            raise KeyError(value)
        return i + 1


def build_frequency_table(group: LinearizedStateGroup, kind: Kind = Kind.GIANT,
                          quantize: Optional[int] = None) -> FrequencyTable:
    vals = np.asarray(group.values, dtype=np.float64)
    if len(vals) == 0:
        raise ValueError("cannot build a frequency table from an empty group")
    if not np.all(np.isfinite(vals)):
        raise TrainingDataError(f"non-finite training value for {group.sensor} in state {group.sb}")
    if quantize is not None:
        vals = np.array([round(float(v), quantize) for v in vals])
    uniq, counts = np.unique(vals, return_counts=True)
    return FrequencyTable(group.sensor, group.sb, Kind(kind), tuple(uniq.tolist()), tuple(counts.tolist()), quantize)


def pr_left(n: int, table: FrequencyTable) -> float:
    """Mass strictly left of the n-th (1-based) entry."""
    if not 1 <= n <= len(table):
        raise IndexError(n)
    return table.cum_below[n - 1] / table.total


def pr_right(n: int, table: FrequencyTable) -> float:
    if not 1 <= n <= len(table):
        raise IndexError(n)
    return table.cum_above[n - 1] / table.total


def straddle_tails(k: int, table: FrequencyTable) -> Tuple[float, float]:
    """Tail masses for a value strictly between entries ``k`` and ``k+1`` (1-based).

    Left mass is ``1 - pr_right`` of the lower neighbour and right mass is
    ``1 - pr_left`` of the upper neighbour, so both neighbours' frequencies
    count toward the test value.
    """
    if not 1 <= k < len(table):
        raise IndexError(k)
    return table.cum_below[k] / table.total, table.cum_above[k - 1] / table.total


def lookup_test_probability(testval: float, table: FrequencyTable) -> float:
    """Not-anomaly probability of a test value; 0 outside the trained support."""
    if math.isnan(testval):
        return 0.0
    v = quantize_value(testval, table.quantize)
    vals = table.values
    i = bisect_left(vals, v)
    if i < len(vals) and vals[i] == v:
        return table.hit_probs[i]
    if i == 0 or i == len(vals):
        return 0.0
    return table.gap_probs[i - 1]


def sw_product(probs: Sequence[float]) -> float:
    return math.prod(probs)


class SlidingProduct:
    """Running product of the last ``window_len`` probabilities.

    Each push multiplies the newest factor in and divides the tail out. Exact
    zeros are counted instead of multiplied; the product is rebuilt from the
    buffer when the last zero leaves. Short windows keep a frexp-normalised
    mantissa/exponent pair so subnormal factors do not underflow; long windows
    keep a sum of logs.
    """

    __slots__ = ("window_len", "log_space", "_buf", "_zeros", "_mant", "_exp", "_log")

    def __init__(self, window_len: int):
        if window_len < 1:
            raise ValueError("window length must be positive")
        self.window_len = window_len
        self.log_space = window_len > LOG_SPACE_THRESHOLD
        self._buf: deque = deque()
        self._zeros = 0
        self._mant = 1.0
        self._exp = 0
        self._log = 0.0

    @property
    def full(self) -> bool:
        return len(self._buf) == self.window_len

    @property
    def zero_count(self) -> int:
        return self._zeros

    def __len__(self) -> int:
        return len(self._buf)

    def _mul(self, p: float) -> None:
        if self.log_space:
            self._log += math.log(p)
        else:
            m, e = math.frexp(p)
            m, e2 = math.frexp(self._mant * m)
            self._mant = m
            self._exp += e + e2

    def _div(self, p: float) -> None:
        if self.log_space:
            self._log -= math.log(p)
        else:
            m, e = math.frexp(p)
            m, e2 = math.frexp(self._mant / m)
            self._mant = m
            self._exp += e2 - e

    def _rebuild(self) -> None:
        self._mant, self._exp, self._log = 1.0, 0, 0.0
        for p in self._buf:
            self._mul(p)

    def push(self, p: float) -> None:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
        if len(self._buf) == self.window_len:
            tail = self._buf.popleft()
            if tail == 0.0:
                self._zeros -= 1
                if self._zeros == 0:
                    self._buf.append(p)
                    if p == 0.0:
                        self._zeros = 1
                    else:
                        self._rebuild()
                    return
            elif self._zeros == 0:
                self._div(tail)
        self._buf.append(p)
        if p == 0.0:
            self._zeros += 1
        elif self._zeros == 0:
            self._mul(p)

    @property
    def product(self) -> float:
        if self._zeros:
            return 0.0
        if self.log_space:
            return math.exp(self._log)
        return math.ldexp(self._mant, self._exp)

    @property
    def log_product(self) -> float:
        if self._zeros:
            return -math.inf
        if self.log_space:
            return self._log
        return math.log(self._mant) + self._exp * _LN2

    @property
    def score(self) -> float:
        """Value compared against window bounds: the product, or its log for long windows."""
        return self.log_product if self.log_space else self.product


@dataclass(frozen=True)
class WindowBounds:
    """Training [min, max] of window products for one (sensor, sb, kind, length).

    ``lo``/``hi`` are in score space: plain products for short windows,
    natural-log products when ``window_len`` exceeds the log-space threshold.
    """

    sensor: str
    sb: str
    kind: Kind
    window_len: int
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"window bounds inverted: {self.lo} > {self.hi}")

    @property
    def log_space(self) -> bool:
        return self.window_len > LOG_SPACE_THRESHOLD

    @property
    def min_prod(self) -> float:
        return math.exp(self.lo) if self.log_space else self.lo

    @property
    def max_prod(self) -> float:
        return math.exp(self.hi) if self.log_space else self.hi

    def check(self, score: float) -> Breach:
        if score < self.lo:
            return Breach.BELOW_LB
        if score > self.hi:
            return Breach.ABOVE_UB
        return Breach.NONE


def window_scores(probs: Iterable[float], window_len: int) -> Iterator[float]:
    """Score of every full window, in order."""
    sp = SlidingProduct(window_len)
    for p in probs:
        sp.push(p)
        if sp.full:
            yield sp.score


def find_min_max_product(probs: Sequence[float], window_lens: Sequence[int], sensor: str = "",
                         sb: str = "", kind: Kind = Kind.GIANT) -> Dict[int, WindowBounds]:
    """Min and max window product over all full windows, per window length.

    Lengths longer than the sequence are skipped with a warning.
    """
    out: Dict[int, WindowBounds] = {}
    for L in window_lens:
        if len(probs) < L:
            log.warning("%s sb=%s %s: group of %d rows shorter than window %d; skipped",
                        sensor, sb, Kind(kind).value, len(probs), L)
            continue
        lo, hi = math.inf, -math.inf
        for s in window_scores(probs, L):
            if s < lo:
                lo = s
            if s > hi:
                hi = s
        out[L] = WindowBounds(sensor, sb, Kind(kind), L, lo, hi)
    return out


@dataclass
class ExtendedTraining:
    """Per-sensor, per-kind extended training output."""

    sensor: str
    kind: Kind
    tables: Dict[str, FrequencyTable]
    windows: Dict[Tuple[str, int], WindowBounds]
    probabilities: Dict[str, np.ndarray]


def extended_train(sensor: str, dataset: Dataset, graph: RelationshipGraph, kind: Kind,
                   window_lens: Sequence[int] = DEFAULT_WINDOWS,
                   quantize: Optional[int] = None) -> ExtendedTraining:
    kind = Kind(kind)
    if not np.all(np.isfinite(dataset.reading(sensor))):
        raise TrainingDataError(f"non-finite readings for {sensor} in training data")
    groups = linearize(dataset, sensor, graph, kind)
    groups.pop(UNSEEN, None)
    tables, windows, probabilities = {}, {}, {}
    for sb in sorted(groups):
        group = groups[sb]
        if len(group) == 0:
            continue
        table = build_frequency_table(group, kind, quantize)
        probs = [lookup_test_probability(float(v), table) for v in group.values]
        tables[sb] = table
        probabilities[sb] = np.array(probs)
        for L, wb in find_min_max_product(probs, window_lens, sensor, sb, kind).items():
            windows[(sb, L)] = wb
    return ExtendedTraining(sensor, kind, tables, windows, probabilities)


class ExtendedStore:
    """Frequency tables and window bounds keyed by (kind, sensor, sb[, length])."""

    def __init__(self, window_lens: Sequence[int] = DEFAULT_WINDOWS, quantize: Optional[int] = None):
        self.window_lens = tuple(window_lens)
        self.quantize = quantize
        self.tables: Dict[Tuple[Kind, str, str], FrequencyTable] = {}
        self.windows: Dict[Tuple[Kind, str, str, int], WindowBounds] = {}

    def add_training(self, result: ExtendedTraining) -> None:
        for sb, t in result.tables.items():
            self.add_table(t)
        for (sb, L), wb in result.windows.items():
            self.add_window(wb)

    def add_table(self, table: FrequencyTable) -> None:
        key = (table.kind, table.sensor, table.sb)
        if key in self.tables:
            raise KeyError(f"duplicate frequency table {key}")
        self.tables[key] = table

    def add_window(self, wb: WindowBounds) -> None:
        key = (wb.kind, wb.sensor, wb.sb, wb.window_len)
        if key in self.windows:
            raise KeyError(f"duplicate window bounds {key}")
        self.windows[key] = wb

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExtendedStore):
            return NotImplemented
        return (self.window_lens == other.window_lens and self.quantize == other.quantize
                and self.tables.keys() == other.tables.keys()
                and all(self.tables[k].values == other.tables[k].values
                        and self.tables[k].freqs == other.tables[k].freqs for k in self.tables)
                and self.windows == other.windows)

    def __len__(self) -> int:
        return len(self.tables)


class ExtendedMonitor:
    """Streaming extended test over a trained :class:`ExtendedStore`.

    Windows are kept per (kind, sensor, sb): a window only aggregates readings
    of one switchboard state and pauses while the sensor is in another state,
    mirroring how training windows run inside each linearized group.
    """

    def __init__(self, store: ExtendedStore, window_lens: Optional[Sequence[int]] = None):
        self.store = store
        self.window_lens = tuple(window_lens) if window_lens is not None else store.window_lens
        self._states: Dict[Tuple[Kind, str, str], List[Tuple[SlidingProduct, Optional[WindowBounds]]]] = {}

    def reset(self) -> None:
        self._states.clear()

    def _slot(self, key):
        slot = self._states.get(key)
        if slot is None:
            slot = [(SlidingProduct(L), self.store.windows.get((*key, L))) for L in self.window_lens]
            self._states[key] = slot
        return slot

    def probability(self, kind: Kind, sensor: str, sb: str, value: float) -> Optional[float]:
        table = self.store.tables.get((kind, sensor, sb))
        if table is None:
            return None
        return lookup_test_probability(value, table)

    def push(self, index: int, sensor: str, sb: str, value: float, kind: Kind) -> List[Verdict]:
        """Feed one reading; returns a verdict per full, trained window.

        States without a frequency table (unseen or illegal) produce nothing
        here; the core detector reports them.
        """
        key = (kind, sensor, sb)
        table = self.store.tables.get(key)
        if table is None:
            return []
        p = lookup_test_probability(value, table)
        out = []
        for sp, wb in self._slot(key):
            sp.push(p)
            if wb is None or not sp.full:
                continue
            score = sp.score
            breach = wb.check(score)
            detail = f"log-space score {score!r} vs [{wb.lo!r},{wb.hi!r}]" if wb.log_space else ""
            out.append(Verdict(sensor, index, sb, sp.product, breach, kind, wb.min_prod, wb.max_prod,
                               window_len=sp.window_len, detail=detail))
        return out


def extended_test(stream: Iterable[Tuple[int, str, float, str]], store: ExtendedStore, kind: Kind,
                  window_lens: Optional[Sequence[int]] = None) -> Iterator[Verdict]:
    """Verdicts for a stream of ``(index, sensor, value, sb)`` tuples."""
    mon = ExtendedMonitor(store, window_lens)
    for index, sensor, value, sb in stream:
        yield from mon.push(index, sensor, sb, value, Kind(kind))
