"""Confusion counts and scores under the conventional and within-bounds-safe policies."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

from .core import Verdict
from .data_model import Dataset, Label


class Policy(str, Enum):
    CONVENTIONAL = "conventional"
    WITHIN_BOUNDS_SAFE = "within-bounds-safe"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int
    policy: Policy = Policy.CONVENTIONAL

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalReport:
    precision: float
    recall: float
    accuracy: float
    f1: float
    counts: ConfusionCounts
    vacuous: List[str] = field(default_factory=list)
    detections: Dict[str, Optional[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"]["policy"] = self.counts.policy.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        c = self.counts
        lines = [
            f"policy     {c.policy.value}",
            f"units      {c.total}  (tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn})",
            f"precision  {self.precision:.4f}",
            f"recall     {self.recall:.4f}",
            f"accuracy   {self.accuracy:.4f}",
            f"f1         {self.f1:.4f}",
        ]
        if self.vacuous:
            lines.append(f"vacuous    {', '.join(self.vacuous)} (no units in denominator; reported as 1)")
        if self.detections:
            lines.append("")
            lines.append(f"{'unit':<24}detected by")
            lines += [f"{u:<24}{d or '-'}" for u, d in self.detections.items()]
        return "\n".join(lines)


def confusion(detected: Sequence[bool], labels: Sequence[bool], policy: Policy = Policy.CONVENTIONAL,
              within_bounds: Optional[Sequence[bool]] = None,
              evaluable: Optional[Sequence[bool]] = None) -> ConfusionCounts:
    """Count outcomes over aligned evaluation units.

    Args:
        detected: whether the detector flagged each unit.
        labels: whether each unit is an attack.
        policy: under ``WITHIN_BOUNDS_SAFE`` an undetected attack unit whose
            readings stayed within trained safety bounds counts as a negative.
        within_bounds: per unit, readings stayed within safety bounds.
        evaluable: per unit, training data exists for it. Units marked False
            are dropped under the conventional policy only.
    """
    n = len(detected)
    if len(labels) != n:
        raise ValueError(f"{n} verdict units but {len(labels)} labels")
    if within_bounds is None:
        within_bounds = [False] * n
    if evaluable is None:
        evaluable = [True] * n
    if len(within_bounds) != n or len(evaluable) != n:
        raise ValueError("within_bounds/evaluable must align with the verdict units")
    policy = Policy(policy)
    tp = fp = tn = fn = 0
    for det, atk, safe, ok in zip(detected, labels, within_bounds, evaluable):
        if policy is Policy.CONVENTIONAL and not ok:
            continue
        if atk and not det and safe and policy is Policy.WITHIN_BOUNDS_SAFE:
            atk = False
        if atk:
            tp, fn = (tp + 1, fn) if det else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if det else (fp, tn + 1)
    return ConfusionCounts(tp, fp, tn, fn, policy)


def scores(counts: ConfusionCounts, detections: Optional[Mapping[str, Optional[str]]] = None) -> EvalReport:
    """Precision, recall, accuracy and F1.

    An empty denominator reports the score as 1 and names it in ``vacuous``.
    """
    c = counts
    vacuous = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            vacuous.append(name)
            return 1.0
        return num / den

    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    accuracy = ratio(c.tp + c.tn, c.total, "accuracy")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(precision, recall, accuracy, f1, c, vacuous, dict(detections or {}))


@dataclass(frozen=True)
class EvalUnit:
    """One evaluation unit, e.g. an attack scenario or a single record."""

    unit_id: str
    is_attack: bool
    detected_by: Optional[str] = None
    within_bounds: bool = False
    has_training_data: bool = True

    @property
    def detected(self) -> bool:
        return self.detected_by is not None


def evaluate(units: Sequence[EvalUnit], policy: Policy = Policy.CONVENTIONAL) -> EvalReport:
    ids = [u.unit_id for u in units]
    if len(set(ids)) != len(ids):
        raise ValueError("evaluation unit ids must be unique")
    counts = confusion([u.detected for u in units], [u.is_attack for u in units], policy,
                       [u.within_bounds for u in units], [u.has_training_data for u in units])
    return scores(counts, {u.unit_id: u.detected_by for u in units})


def _first_detector(vs: Iterable[Verdict]) -> Optional[str]:
    for v in vs:
        if v.anomalous:
            if v.breach.value == "UnseenState":
                return "unseen-state"
            return v.detector
    return None


def units_from_manifest(verdicts: Iterable[Verdict], manifest: Mapping) -> List[EvalUnit]:
    """One unit per injected attack; detected if any anomalous verdict lands on an affected index.

    ``within_bounds`` is true for attacks the manifest classifies as
    undetectable by the core bounds.
    """
    by_index: Dict[int, List[Verdict]] = {}
    for v in verdicts:
        if v.anomalous:
            by_index.setdefault(v.index, []).append(v)
    units = []
    for atk in manifest["attacks"]:
        hits = [v for t in atk["indices"] for v in by_index.get(int(t), [])]
        units.append(EvalUnit(atk["id"], True, _first_detector(hits),
                              within_bounds=atk.get("expected") != "CoreDetectable"))
    return units


def units_from_records(verdicts: Iterable[Verdict], dataset: Dataset) -> List[EvalUnit]:
    """Per-record units labelled by the dataset's Normal/Attack column."""
    by_index: Dict[int, List[Verdict]] = {}
    for v in verdicts:
        if v.anomalous:
            by_index.setdefault(v.index, []).append(v)
    units = []
    for t, lb in zip(dataset.index.tolist(), dataset.labels):
        hits = by_index.get(t, [])
        units.append(EvalUnit(str(t), lb is Label.ATTACK, _first_detector(hits), within_bounds=not hits))
    return units
