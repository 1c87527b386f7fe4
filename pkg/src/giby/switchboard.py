"""Switchboard encoding of nn-actuator states and linearized state groups."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data_model import Dataset, RelationshipGraph, nearest_neighbors

DELIMITER = "|"
# Key for invalid actuator tuples. Legal keys never contain '-'.
UNSEEN = "-1"


class Kind(str, Enum):
    """Which series a detector works on: raw readings or one-step differences."""

    GIANT = "giant"
    BABY = "baby"


def encode_state(states: Sequence[int], domains: Optional[Sequence[Sequence[int]]] = None) -> str:
    """Join an ordered actuator-state tuple into a switchboard key.

    >>> encode_state((0, 1))
    '0|1'

    Returns :data:`UNSEEN` when ``domains`` is given and a state falls outside
    its actuator's domain.
    """
    if domains is not None:
        if len(domains) != len(states):
            raise ValueError(f"expected {len(domains)} actuator states, got {len(states)}")
        for s, dom in zip(states, domains):
            if s not in dom:
                return UNSEEN
    return DELIMITER.join(str(int(s)) for s in states)


def decode_state(key: str) -> Tuple[int, ...]:
    if key == UNSEEN:
        raise ValueError("the UNSEEN sentinel has no state tuple")
    if key == "":
        return ()
    return tuple(int(p) for p in key.split(DELIMITER))


def dataset_diff(dataset: Dataset, sensor: str) -> np.ndarray:
    """One-step differences of a sensor, aligned with ``dataset.index[1:]``.

    Index 1 has no previous reading and therefore no entry.
    """
    return np.diff(dataset.reading(sensor))


@dataclass(frozen=True)
class LinearizedStateGroup:
    sensor: str
    sb: str
    indices: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def rows(self) -> List[Tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))


def _legal_mask(states: np.ndarray, domains: Sequence[Sequence[int]]) -> np.ndarray:
    mask = np.ones(states.shape[0], dtype=bool)
    for j, dom in enumerate(domains):
        mask &= np.isin(states[:, j], np.asarray(dom, dtype=np.int64))
    return mask


def switchboard_keys(dataset: Dataset, sensor: str, graph: RelationshipGraph) -> List[str]:
    """Switchboard key of every record for ``sensor`` (UNSEEN for illegal tuples)."""
    acts = nearest_neighbors(sensor, graph)
    states = dataset.states(acts)
    domains = [graph.domains[a] for a in acts]
    legal = _legal_mask(states, domains)
    rows = states.tolist()
    return [DELIMITER.join(map(str, r)) if ok else UNSEEN for r, ok in zip(rows, legal.tolist())]


def linearize(dataset: Dataset, sensor: str, graph: RelationshipGraph, mode: Kind,
              drop_cross_boundary: bool = False) -> Dict[str, LinearizedStateGroup]:
    """Split one sensor's series into per-switchboard-state groups.

    In baby mode every record from the second on contributes its diff to the
    group of its *current* state, including diffs that span a state change;
    ``drop_cross_boundary`` discards those instead. Rows with an illegal
    actuator tuple go to the :data:`UNSEEN` group.
    """
    acts = nearest_neighbors(sensor, graph)
    if not acts:
        raise ValueError(f"sensor {sensor} has no nn-actuators")
    mode = Kind(mode)
    states = dataset.states(acts)
    domains = [graph.domains[a] for a in acts]
    values = dataset.reading(sensor)
    index = dataset.index
    if mode is Kind.BABY:
        values = np.diff(values)
        index = index[1:]
        eligible = np.ones(len(values), dtype=bool)
        if drop_cross_boundary and len(states) > 1:
            eligible = np.all(states[1:] == states[:-1], axis=1)
        states = states[1:]
    else:
        eligible = np.ones(len(values), dtype=bool)

    groups: Dict[str, LinearizedStateGroup] = {}
    if len(values) == 0:
        return groups
    legal = _legal_mask(states, domains)
    ok = legal & eligible
    if ok.any():
        uniq, inverse = np.unique(states[ok], axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        rows = np.flatnonzero(ok)
        for g, tup in enumerate(uniq.tolist()):
            sel = rows[inverse == g]
            key = encode_state(tup)
            groups[key] = LinearizedStateGroup(sensor, key, index[sel], values[sel])
    bad = ~legal & eligible
    if bad.any():
        sel = np.flatnonzero(bad)
        groups[UNSEEN] = LinearizedStateGroup(sensor, UNSEEN, index[sel], values[sel])
    return groups
