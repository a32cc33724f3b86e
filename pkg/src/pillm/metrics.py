"""Detection metrics: pointwise, point-adjusted, and event-level scoring.

The event-level score treats every labeled incident as one detection target:
an incident counts as a true positive when at least one of its rows is
flagged, while false positives are still charged per flagged row outside any
incident. This rewards catching an incident anywhere in its span without
letting a rule spam alarms for free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .timeseries import IncidentSet, incidents_from_labels

METRIC_MODES = ("pointwise", "point_adjusted", "event_pa")


@dataclass(frozen=True)
class ConfusionCounts:
    """Pointwise confusion counts over aligned flag/label vectors."""

    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in METRIC_MODES:
            raise ValueError(f"unknown metric mode {self.mode!r}")

    def line(self) -> str:
        """Render the single-line summary used by the CLI."""
        return (
            f"mode={self.mode} precision={self.precision:.6f} "
            f"recall={self.recall:.6f} f1={self.f1:.6f}"
        )


def _as_binary(vec: Sequence[int] | np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(vec)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be 1-D")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{what} must contain only 0 and 1")
    return arr.astype(np.uint8)


def confusion(flags: Sequence[int] | np.ndarray, labels: Sequence[int] | np.ndarray) -> ConfusionCounts:
    """Count pointwise agreement between flags and ground-truth labels."""
    f = _as_binary(flags, "flags")
    y = _as_binary(labels, "labels")
    if f.shape != y.shape:
        raise ValueError(f"flags ({f.size}) and labels ({y.size}) differ in length")
    tp = int(np.sum((f == 1) & (y == 1)))
    fp = int(np.sum((f == 1) & (y == 0)))
    fn = int(np.sum((f == 0) & (y == 1)))
    tn = int(np.sum((f == 0) & (y == 0)))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _f1(precision: float, recall: float) -> float:
    return _ratio(2.0 * precision * recall, precision + recall)


def precision_recall_f1(counts: ConfusionCounts, mode: str = "pointwise") -> MetricReport:
    """Derive precision/recall/F1 from confusion counts; 0/0 ratios are 0."""
    precision = _ratio(counts.tp, counts.tp + counts.fp)
    recall = _ratio(counts.tp, counts.tp + counts.fn)
    return MetricReport(precision=precision, recall=recall, f1=_f1(precision, recall), mode=mode)


def point_adjust(flags: Sequence[int] | np.ndarray, incidents: IncidentSet) -> np.ndarray:
    """Expand flags so a hit anywhere in an incident credits its whole span."""
    adjusted = _as_binary(flags, "flags").copy()
    for start, end in incidents:
        if end >= adjusted.size:
            raise ValueError(
                f"incident ({start}, {end}) is out of range for {adjusted.size} flags"
            )
        if np.any(adjusted[start : end + 1]):
            adjusted[start : end + 1] = 1
    return adjusted


def pointwise_report(flags, labels) -> MetricReport:
    return precision_recall_f1(confusion(flags, labels), mode="pointwise")


def point_adjusted_report(flags, labels) -> MetricReport:
    """Pointwise scoring after point adjustment against labeled incidents."""
    y = _as_binary(labels, "labels")
    adjusted = point_adjust(flags, incidents_from_labels(y))
    return precision_recall_f1(confusion(adjusted, y), mode="point_adjusted")


def event_f1_pa(flags, labels) -> MetricReport:
    """Event-level F1 with point adjustment.

    Incidents are maximal runs of label 1. An incident is a true positive
    when any of its rows is flagged, otherwise a false negative; every
    flagged row outside all incidents is one false positive. Hence
    recall = TP_e / (TP_e + FN_e) and precision = TP_e / (TP_e + FP_p),
    with empty denominators scoring 0.
    """
    f = _as_binary(flags, "flags")
    y = _as_binary(labels, "labels")
    if f.shape != y.shape:
        raise ValueError(f"flags ({f.size}) and labels ({y.size}) differ in length")
    incidents = incidents_from_labels(y)
    tp_events = sum(1 for start, end in incidents if np.any(f[start : end + 1]))
    fn_events = len(incidents) - tp_events
    fp_points = int(np.sum((f == 1) & (y == 0)))
    precision = _ratio(tp_events, tp_events + fp_points)
    recall = _ratio(tp_events, tp_events + fn_events)
    return MetricReport(precision=precision, recall=recall, f1=_f1(precision, recall), mode="event_pa")
