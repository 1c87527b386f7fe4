"""Dataset schema, CSV ingestion and the sensor/actuator relationship graph."""

from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

INDEX_COLUMN = "Index"
LABEL_COLUMN = "Label"


class DeviceKind(str, Enum):
    SENSOR = "Sensor"
    ACTUATOR = "Actuator"


class Label(str, Enum):
    NORMAL = "Normal"
    ATTACK = "Attack"
    UNLABELED = "Unlabeled"


@dataclass(frozen=True)
class DeviceId:
    name: str
    kind: DeviceKind

    def __post_init__(self):
        if not self.name:
            raise ValueError("device name must be non-empty")


@dataclass(frozen=True)
class ActuatorSpec:
    """An actuator and its legal actuation states (e.g. close/transition/open)."""

    name: str
    state_domain: Tuple[int, ...]

    def __post_init__(self):
        if not self.state_domain:
            raise ValueError(f"actuator {self.name} has an empty state domain")
        if any(s < 0 for s in self.state_domain):
            raise ValueError(f"actuator {self.name} has negative states")
        object.__setattr__(self, "state_domain", tuple(sorted(set(self.state_domain))))

    @property
    def id(self) -> DeviceId:
        return DeviceId(self.name, DeviceKind.ACTUATOR)


class DatasetParseError(ValueError):
    """Malformed CSV input. ``line`` is the 1-based physical line (header is line 1)."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaViolation(DatasetParseError):
    def __init__(self, device: str, value, line: Optional[int] = None):
        self.device = device
        self.value = value
        super().__init__(f"{device}={value} is outside its declared state domain", line)


class UnknownSensorError(KeyError):
    pass


@dataclass(frozen=True)
class Schema:
    """Ordered device columns.

    ``actuators`` maps actuator name to its state domain; a domain of ``None``
    accepts any non-negative integer (used when the domain is only known from
    the graph and should be checked by :func:`validate_graph` instead).
    """

    columns: Tuple[str, ...]
    actuators: Mapping[str, Optional[Tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("duplicate device names in schema")
        if any(not c for c in self.columns):
            raise ValueError("empty device name in schema")
        missing = set(self.actuators) - set(self.columns)
        if missing:
            raise ValueError(f"actuators not among columns: {sorted(missing)}")

    @property
    def sensors(self) -> Tuple[str, ...]:
        return tuple(c for c in self.columns if c not in self.actuators)

    def kind(self, name: str) -> DeviceKind:
        if name not in self.columns:
            raise KeyError(name)
        return DeviceKind.ACTUATOR if name in self.actuators else DeviceKind.SENSOR

    def devices(self) -> List[DeviceId]:
        return [DeviceId(c, self.kind(c)) for c in self.columns]

    @classmethod
    def from_header(cls, header: Sequence[str], graph: Optional["RelationshipGraph"] = None,
                    validate_domains: bool = True) -> "Schema":
        """Build a schema from CSV column names; columns with a graph domain are actuators."""
        cols = tuple(h for h in header if h not in (INDEX_COLUMN, LABEL_COLUMN))
        acts: Dict[str, Optional[Tuple[int, ...]]] = {}
        if graph is not None:
            for c in cols:
                if c in graph.domains:
                    acts[c] = graph.domains[c] if validate_domains else None
        return cls(cols, acts)


@dataclass(frozen=True)
class Record:
    index: int
    values: Mapping[str, Union[float, int]]
    label: Label = Label.UNLABELED


class Dataset:
    """Index-ordered records stored column-wise.

    Sensor columns are float64 arrays and actuator columns int64 arrays.
    """

    def __init__(self, schema: Schema, index: Sequence[int], columns: Mapping[str, Sequence],
                 labels: Optional[Sequence[Label]] = None):
        self.schema = schema
        self.index = np.asarray(index, dtype=np.int64)
        n = len(self.index)
        if n > 1 and not np.all(np.diff(self.index) > 0):
            raise ValueError("record indices must be strictly increasing")
        cols = {}
        for name in schema.columns:
            if name not in columns:
                raise ValueError(f"missing column {name}")
            dtype = np.int64 if name in schema.actuators else np.float64
            arr = np.asarray(columns[name], dtype=dtype)
            if arr.shape != (n,):
                raise ValueError(f"column {name} has {arr.shape[0]} rows, expected {n}")
            arr.setflags(write=False)
            cols[name] = arr
        self.columns: Dict[str, np.ndarray] = cols
        self.index.setflags(write=False)
        if labels is None:
            self.labels: Tuple[Label, ...] = (Label.UNLABELED,) * n
        else:
            self.labels = tuple(Label(lb) for lb in labels)
            if len(self.labels) != n:
                raise ValueError("labels length does not match records")
        self._pos = None

    def __len__(self) -> int:
        return len(self.index)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.schema.columns == other.schema.columns
                and dict(self.schema.actuators) == dict(other.schema.actuators)
                and np.array_equal(self.index, other.index)
                and self.labels == other.labels
                and all(np.array_equal(self.columns[c], other.columns[c], equal_nan=True)
                        if c not in self.schema.actuators
                        else np.array_equal(self.columns[c], other.columns[c])
                        for c in self.schema.columns))

    def __repr__(self) -> str:
        return f"Dataset({len(self)} records, columns={list(self.schema.columns)})"

    @property
    def labeled(self) -> bool:
        return any(lb is not Label.UNLABELED for lb in self.labels)

    def position(self, index: int) -> int:
        """Row position of a time index; raises IndexError if absent."""
        if self._pos is None:
            self._pos = {int(t): i for i, t in enumerate(self.index)}
        try:
            return self._pos[int(index)]
        except KeyError:
            raise IndexError(f"time index {index} not in dataset") from None

    def record(self, pos: int) -> Record:
        values = {}
        for c in self.schema.columns:
            v = self.columns[c][pos]
            values[c] = int(v) if c in self.schema.actuators else float(v)
        return Record(int(self.index[pos]), values, self.labels[pos])

    def records(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield self.record(i)

    def reading(self, sensor: str) -> np.ndarray:
        return self.columns[sensor]

    def states(self, actuators: Sequence[str]) -> np.ndarray:
        """(N, k) integer matrix of actuator states in the given order."""
        if not actuators:
            return np.empty((len(self), 0), dtype=np.int64)
        return np.column_stack([self.columns[a] for a in actuators])

    def slice(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.schema, self.index[start:stop],
                       {c: v[start:stop] for c, v in self.columns.items()},
                       self.labels[start:stop])

    def replace(self, columns: Optional[Mapping[str, Sequence]] = None,
                labels: Optional[Sequence[Label]] = None) -> "Dataset":
        cols = dict(self.columns)
        if columns:
            cols.update(columns)
        return Dataset(self.schema, self.index, cols, self.labels if labels is None else labels)

    def to_csv(self, stream: Optional[TextIO] = None, include_labels: Optional[bool] = None) -> Optional[str]:
        """Write as CSV with a leading Index column; returns the text when no stream is given."""
        out = stream if stream is not None else io.StringIO()
        if include_labels is None:
            include_labels = self.labeled
        writer = csv.writer(out, lineterminator="\n")
        header = [INDEX_COLUMN, *self.schema.columns] + ([LABEL_COLUMN] if include_labels else [])
        writer.writerow(header)
        acts = self.schema.actuators
        cols = [(c in acts, self.columns[c].tolist()) for c in self.schema.columns]
        idx = self.index.tolist()
        for i in range(len(idx)):
            row = [str(idx[i])]
            for is_act, vals in cols:
                row.append(str(vals[i]) if is_act else repr(vals[i]))
            if include_labels:
                row.append(self.labels[i].value)
            writer.writerow(row)
        if stream is None:
            return out.getvalue()
        return None


def _parse_float(cell: str, line: int, device: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DatasetParseError(f"non-numeric value {cell!r} for {device}", line) from None


def _parse_state(cell: str, line: int, device: str) -> int:
    try:
        v = float(cell)
    except ValueError:
        raise DatasetParseError(f"non-numeric value {cell!r} for {device}", line) from None
    if not math.isfinite(v) or v != int(v):
        raise DatasetParseError(f"non-integer actuator state {cell!r} for {device}", line)
    return int(v)


class RecordReader:
    """Row-at-a-time CSV reader; memory use does not grow with the file.

    Either ``schema`` or ``graph`` determines which columns are actuators.
    An ``Index`` column and a ``Label`` column are recognised by name; without
    an index column records are numbered 1..N in file order.
    """

    def __init__(self, stream: TextIO, schema: Optional[Schema] = None,
                 graph: Optional["RelationshipGraph"] = None):
        self._reader = csv.reader(stream)
        try:
            header = [h.strip() for h in next(self._reader)]
        except StopIteration:
            raise DatasetParseError("missing header row", 1) from None
        if schema is None:
            schema = Schema.from_header(header, graph)
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise DatasetParseError(f"header is missing devices {missing}", 1)
        extra = [h for h in header if h not in schema.columns and h not in (INDEX_COLUMN, LABEL_COLUMN)]
        if extra:
            raise DatasetParseError(f"header has columns not in schema {extra}", 1)
        self.header = header
        self.schema = schema
        self._pos = {h: i for i, h in enumerate(header)}
        self.has_index = INDEX_COLUMN in self._pos
        self.has_labels = LABEL_COLUMN in self._pos
        self._domains = {a: (set(d) if d is not None else None) for a, d in schema.actuators.items()}

    def __iter__(self) -> Iterator[Record]:
        pos, domains = self._pos, self._domains
        idx_col, lbl_col = pos.get(INDEX_COLUMN), pos.get(LABEL_COLUMN)
        width = len(self.header)
        prev, count = None, 0
        for row in self._reader:
            line = self._reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise DatasetParseError(f"expected {width} fields, got {len(row)}", line)
            values: Dict[str, Union[float, int]] = {}
            for c in self.schema.columns:
                cell = row[pos[c]].strip()
                if c in domains:
                    v = _parse_state(cell, line, c)
                    dom = domains[c]
                    if v < 0 or (dom is not None and v not in dom):
                        raise SchemaViolation(c, v, line)
                    values[c] = v
                else:
                    values[c] = _parse_float(cell, line, c)
            count += 1
            if idx_col is not None:
                cell = row[idx_col].strip()
                try:
                    index = int(cell)
                except ValueError:
                    raise DatasetParseError(f"non-integer index {cell!r}", line) from None
                if prev is not None and index <= prev:
                    raise DatasetParseError("index is not strictly increasing", line)
            else:
                index = count
            prev = index
            label = Label.UNLABELED
            if lbl_col is not None:
                cell = row[lbl_col].strip()
                try:
                    label = Label(cell) if cell else Label.UNLABELED
                except ValueError:
                    raise DatasetParseError(f"unknown label {cell!r}", line) from None
            yield Record(index, values, label)


def parse_dataset(source: Union[str, bytes, TextIO, Path, io.BufferedIOBase],
                  schema: Optional[Schema] = None,
                  graph: Optional["RelationshipGraph"] = None) -> Dataset:
    """Parse a header-bearing CSV into a :class:`Dataset`.

    Malformed rows raise :class:`DatasetParseError` and out-of-domain actuator
    states :class:`SchemaViolation`, both carrying the file line number.
    """
    reader = RecordReader(io.StringIO(_read_text(source), newline=""), schema, graph)
    index: List[int] = []
    labels: List[Label] = []
    cols: Dict[str, list] = {c: [] for c in reader.schema.columns}
    for rec in reader:
        index.append(rec.index)
        labels.append(rec.label)
        for c, v in rec.values.items():
            cols[c].append(v)
    return Dataset(reader.schema, index, cols, labels if reader.has_labels else None)


def _read_text(source) -> str:
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


@dataclass(frozen=True)
class RelationshipGraph:
    """Per-sensor ordered nn-actuator lists plus each actuator's state domain.

    The list order is the switchboard concatenation order and must be the
    same for training and testing.
    """

    neighbors: Mapping[str, Tuple[str, ...]]
    domains: Mapping[str, Tuple[int, ...]]

    def __post_init__(self):
        object.__setattr__(self, "neighbors", {s: tuple(a) for s, a in self.neighbors.items()})
        object.__setattr__(self, "domains",
                           {a: ActuatorSpec(a, tuple(d)).state_domain for a, d in self.domains.items()})

    @property
    def sensors(self) -> Tuple[str, ...]:
        return tuple(self.neighbors)

    def actuator_specs(self) -> List[ActuatorSpec]:
        return [ActuatorSpec(a, d) for a, d in self.domains.items()]

    @classmethod
    def from_config(cls, text: str) -> "RelationshipGraph":
        """Parse the ``[sensors]`` / ``[actuators]`` document.

        An optional ``[plc]`` section lists non-neighbour actuators imposed by
        PLC logic; they are appended to the sensor's nn list.
        """
        parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                           delimiters=("=",), interpolation=None)
        parser.optionxform = str
        parser.read_string(text)

        def split(v: str) -> List[str]:
            return [p.strip() for p in v.split(",") if p.strip()]

        neighbors: Dict[str, List[str]] = {}
        if parser.has_section("sensors"):
            for s, v in parser.items("sensors"):
                neighbors[s.strip()] = split(v)
        if parser.has_section("plc"):
            for s, v in parser.items("plc"):
                lst = neighbors.setdefault(s.strip(), [])
                lst.extend(a for a in split(v) if a not in lst)
        domains: Dict[str, Tuple[int, ...]] = {}
        if parser.has_section("actuators"):
            for a, v in parser.items("actuators"):
                try:
                    domains[a.strip()] = tuple(int(x) for x in split(v))
                except ValueError:
                    raise ValueError(f"actuator {a}: state domain must be integers, got {v!r}") from None
        return cls({s: tuple(v) for s, v in neighbors.items()}, domains)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RelationshipGraph":
        return cls.from_config(Path(path).read_text(encoding="utf-8"))

    def to_config(self) -> str:
        lines = ["[sensors]"]
        lines += [f"{s} = {','.join(a)}" for s, a in self.neighbors.items()]
        lines += ["", "[actuators]"]
        lines += [f"{a} = {','.join(str(x) for x in d)}" for a, d in self.domains.items()]
        return "\n".join(lines) + "\n"


def nearest_neighbors(sensor: str, graph: RelationshipGraph) -> Tuple[str, ...]:
    try:
        return graph.neighbors[sensor]
    except KeyError:
        raise UnknownSensorError(sensor) from None


@dataclass(frozen=True)
class ValidationIssue:
    kind: str  # "no-neighbors" | "device-absent" | "domain-mismatch" | "undeclared-domain"
    device: str
    detail: str


def validate_graph(graph: RelationshipGraph, dataset: Dataset) -> List[ValidationIssue]:
    """Report inconsistencies between a graph and a dataset; never raises."""
    issues: List[ValidationIssue] = []
    cols = set(dataset.schema.columns)
    for sensor, acts in graph.neighbors.items():
        if not acts:
            issues.append(ValidationIssue("no-neighbors", sensor, "sensor has no nn-actuators"))
        if sensor not in cols:
            issues.append(ValidationIssue("device-absent", sensor, "sensor not in dataset"))
    referenced = []
    for acts in graph.neighbors.values():
        referenced += [a for a in acts if a not in referenced]
    for a in referenced:
        if a not in cols:
            issues.append(ValidationIssue("device-absent", a, "actuator referenced by graph but absent from dataset"))
        elif a not in graph.domains:
            issues.append(ValidationIssue("undeclared-domain", a, "actuator has no declared state domain"))
    for a, dom in graph.domains.items():
        if a not in cols:
            if a not in referenced:
                issues.append(ValidationIssue("device-absent", a, "actuator declared but absent from dataset"))
            continue
        observed = set(np.unique(dataset.columns[a]).astype(int).tolist())
        extra = sorted(observed - set(dom))
        if extra:
            issues.append(ValidationIssue("domain-mismatch", a,
                                          f"observed states {extra} outside declared domain {list(dom)}"))
    return issues
