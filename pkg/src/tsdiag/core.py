"""Core value types: series, anomaly taxonomy, intervals, and records.

All index intervals in this package are inclusive on both ends, so a
single-point anomaly at index i is the interval (i, i).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class AnomalyFamily(enum.Enum):
    POINT = "point"
    STRUCTURAL = "structural"
    SEASONAL = "seasonal"
    PATTERN = "pattern"


class AnomalyType(enum.IntEnum):
    """The nine anomaly types, grouped into four evidence families."""

    GLOBAL_POINT = 1
    CONTEXTUAL_POINT = 2
    AMPLITUDE_CHANGE = 3
    SEASONALITY_ANOMALY = 4
    TREND_CHANGE = 5
    MEAN_CHANGE_POINT = 6
    VARIANCE_CHANGE = 7
    PATTERN_SHIFT = 8
    WAVEFORM_DISTORTION = 9

    @property
    def family(self) -> AnomalyFamily:
        return _TYPE_FAMILY[self]


_TYPE_FAMILY = {
    AnomalyType.GLOBAL_POINT: AnomalyFamily.POINT,
    AnomalyType.CONTEXTUAL_POINT: AnomalyFamily.POINT,
    AnomalyType.AMPLITUDE_CHANGE: AnomalyFamily.SEASONAL,
    AnomalyType.SEASONALITY_ANOMALY: AnomalyFamily.SEASONAL,
    AnomalyType.TREND_CHANGE: AnomalyFamily.STRUCTURAL,
    AnomalyType.MEAN_CHANGE_POINT: AnomalyFamily.STRUCTURAL,
    AnomalyType.VARIANCE_CHANGE: AnomalyFamily.STRUCTURAL,
    AnomalyType.PATTERN_SHIFT: AnomalyFamily.PATTERN,
    AnomalyType.WAVEFORM_DISTORTION: AnomalyFamily.PATTERN,
}

#: Types belonging to each family, e.g. FAMILY_TYPES[AnomalyFamily.POINT].
FAMILY_TYPES: dict[AnomalyFamily, frozenset[AnomalyType]] = {
    fam: frozenset(t for t, f in _TYPE_FAMILY.items() if f is fam)
    for fam in AnomalyFamily
}


class Interval(NamedTuple):
    """Inclusive index interval. start <= end is required by all consumers."""

    start: int
    end: int

    def length(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "Interval") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class Series:
    """A univariate series with optional timestamps and binary labels.

    Arrays are stored read-only; equal lengths are enforced on construction.
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    series_id: str = "series"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("series values must be one-dimensional")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != values.shape:
                raise ValueError("labels length must match values length")
            if not np.isin(labels, (0, 1)).all():
                raise ValueError("labels must be binary")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps)
            if ts.shape != values.shape:
                raise ValueError("timestamps length must match values length")
            ts.flags.writeable = False
            object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class AnomalyRecord:
    """One detected anomaly: an inclusive interval with a scored diagnosis.

    ``raw_score`` is the detector's integer 0-100 rubric score; ``confidence``
    is always exactly ``raw_score / 100``.
    """

    start: int
    end: int
    raw_score: int
    types: frozenset[AnomalyType]
    evidence: str = ""

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid interval ({self.start}, {self.end})")
        if not 0 <= self.raw_score <= 100:
            raise ValueError(f"raw_score {self.raw_score} outside [0, 100]")
        if not self.types:
            raise ValueError("record must carry at least one anomaly type")
        object.__setattr__(self, "types", frozenset(AnomalyType(t) for t in self.types))

    @property
    def confidence(self) -> float:
        return self.raw_score / 100

    @property
    def interval(self) -> Interval:
        return Interval(self.start, self.end)

    def to_json(self) -> dict:
        return {
            "index": self.start,
            "end_index": self.end,
            "confidence": self.confidence,
            "types": sorted(int(t) for t in self.types),
            "evidence": self.evidence,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnomalyRecord":
        return cls(
            start=int(obj["index"]),
            end=int(obj["end_index"]),
            raw_score=int(round(float(obj["confidence"]) * 100)),
            types=frozenset(AnomalyType(t) for t in obj["types"]),
            evidence=str(obj.get("evidence", "")),
        )


def merge_intervals(intervals: Iterable[Interval], gap: int = 0) -> list[Interval]:
    """Merge overlapping, adjacent, or near-adjacent intervals.

    Two intervals are merged when ``next.start - cur.end <= max(gap, 1)``:
    directly adjacent runs always coalesce, and a positive ``gap`` also
    bridges separations of up to ``gap`` positions. Idempotent.
    """
    if gap < 0:
        raise ValueError("gap must be non-negative")
    items = sorted(Interval(int(s), int(e)) for s, e in intervals)
    if not items:
        return []
    reach = max(gap, 1)
    merged = [items[0]]
    for cur in items[1:]:
        prev = merged[-1]
        if cur.start - prev.end <= reach:
            merged[-1] = Interval(prev.start, max(prev.end, cur.end))
        else:
            merged.append(cur)
    return merged


def labels_to_segments(labels: Sequence[int] | np.ndarray) -> list[Interval]:
    """Maximal runs of 1s in a binary label vector, as inclusive intervals."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if arr.size == 0:
        return []
    padded = np.concatenate(([0], (arr != 0).astype(np.int64), [0]))
    delta = np.diff(padded)
    starts = np.flatnonzero(delta == 1)
    ends = np.flatnonzero(delta == -1) - 1
    return [Interval(int(s), int(e)) for s, e in zip(starts, ends)]


def segments_to_labels(intervals: Iterable[Interval], n: int) -> np.ndarray:
    """Rasterize inclusive intervals onto a binary vector of length n."""
    labels = np.zeros(n, dtype=np.int64)
    for start, end in intervals:
        if start < 0 or end >= n or start > end:
            raise ValueError(f"interval ({start}, {end}) outside [0, {n})")
        labels[start : end + 1] = 1
    return labels
