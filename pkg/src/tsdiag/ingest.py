"""Dataset loading, train/test splitting, and fixed-stride windowing."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Series
from .errors import (
    DegenerateSplit,
    EmptyFile,
    MissingColumn,
    MissingInput,
    ParseError,
)


@dataclass(frozen=True)
class WindowPlan:
    """Fixed-length windowing; defaults follow the pipeline's 400/400 setup."""

    window: int = 400
    stride: int = 400

    def __post_init__(self):
        if not 1 <= self.stride <= self.window:
            raise ValueError("require 1 <= stride <= window")


@dataclass(frozen=True)
class Dataset:
    name: str
    series: tuple[Series, ...]

    def __post_init__(self):
        ids = [s.series_id for s in self.series]
        if len(set(ids)) != len(ids):
            raise ValueError("series ids within a dataset must be unique")

    def __len__(self) -> int:
        return len(self.series)


def _forward_fill(values: list[float], path: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(arr)
    if not finite.any():
        raise ParseError(f"{path}: no finite values")
    first = arr[np.argmax(finite)]
    out = arr.copy()
    last = first
    for i in range(out.size):
        if finite[i]:
            last = out[i]
        else:
            out[i] = last
    return out


def load_csv(
    path: str | Path,
    value_column: str = "value",
    label_column: str | None = None,
    timestamp_column: str | None = None,
    series_id: str | None = None,
) -> Series:
    """Load one series from a headed CSV file.

    Non-finite values (empty cells, NaN, inf) are forward-filled; leading
    non-finite values take the first finite value. Row indices in errors are
    0-based over data rows.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInput(str(path))
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(str(path))
        for col in (value_column, label_column, timestamp_column):
            if col is not None and col not in reader.fieldnames:
                raise MissingColumn(f"{path}: column {col!r} not in header")
        values: list[float] = []
        labels: list[int] = []
        stamps: list[str] = []
        for row_idx, row in enumerate(reader):
            cell = row[value_column]
            try:
                values.append(float(cell) if cell not in (None, "") else math.nan)
            except (TypeError, ValueError):
                raise ParseError(f"{path}: bad value {cell!r}", row=row_idx) from None
            if label_column is not None:
                raw = row[label_column]
                if raw not in ("0", "1"):
                    raise ParseError(f"{path}: bad label {raw!r}", row=row_idx)
                labels.append(int(raw))
            if timestamp_column is not None:
                stamps.append(row[timestamp_column])
    if not values:
        raise EmptyFile(str(path))
    return Series(
        values=_forward_fill(values, str(path)),
        labels=np.asarray(labels, dtype=np.int64) if label_column else None,
        timestamps=np.asarray(stamps) if timestamp_column else None,
        series_id=series_id or path.stem,
    )


def load_jsonl(path: str | Path, series_id: str | None = None) -> Series:
    """Load one series from JSON-lines: one {"timestamp","value","label"} per point.

    "timestamp" and "label" are optional but must be consistent across rows.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInput(str(path))
    values: list[float] = []
    labels: list[int] = []
    stamps: list = []
    with path.open() as fh:
        for row_idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc.msg}", row=row_idx) from None
            if "value" not in obj:
                raise MissingColumn(f"{path}: row {row_idx} lacks 'value'")
            try:
                values.append(float(obj["value"]))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: bad value {obj['value']!r}", row=row_idx) from None
            if "label" in obj:
                if obj["label"] not in (0, 1):
                    raise ParseError(f"{path}: bad label {obj['label']!r}", row=row_idx)
                labels.append(int(obj["label"]))
            if "timestamp" in obj:
                stamps.append(obj["timestamp"])
    if not values:
        raise EmptyFile(str(path))
    n = len(values)
    if labels and len(labels) != n:
        raise ParseError(f"{path}: 'label' present on only some rows")
    if stamps and len(stamps) != n:
        raise ParseError(f"{path}: 'timestamp' present on only some rows")
    return Series(
        values=_forward_fill(values, str(path)),
        labels=np.asarray(labels, dtype=np.int64) if labels else None,
        timestamps=np.asarray(stamps) if stamps else None,
        series_id=series_id or path.stem,
    )


def load_dataset(path: str | Path, **csv_kwargs) -> Dataset:
    """A single CSV/JSONL file, or a directory of them (sorted by name)."""
    path = Path(path)
    if not path.exists():
        raise MissingInput(str(path))
    if path.is_file():
        series = [_load_any(path, **csv_kwargs)]
        return Dataset(name=path.stem, series=tuple(series))
    files = sorted(p for p in path.iterdir() if p.suffix in (".csv", ".jsonl"))
    if not files:
        raise EmptyFile(f"{path}: no .csv or .jsonl files")
    return Dataset(name=path.name, series=tuple(_load_any(p, **csv_kwargs) for p in files))


def _load_any(path: Path, **csv_kwargs) -> Series:
    if path.suffix == ".jsonl":
        return load_jsonl(path)
    if not csv_kwargs:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), [])
        if "label" in header:
            csv_kwargs["label_column"] = "label"
        if "timestamp" in header:
            csv_kwargs["timestamp_column"] = "timestamp"
    return load_csv(path, **csv_kwargs)


def temporal_split(series: Series, train_fraction: float) -> tuple[Series, Series]:
    """Split into (train, test) at floor(n * train_fraction) points."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(series)
    cut = int(math.floor(n * train_fraction))
    if cut == 0 or cut == n:
        raise DegenerateSplit(f"split at {cut} of {n} leaves an empty side")

    def piece(lo: int, hi: int, suffix: str) -> Series:
        return Series(
            values=series.values[lo:hi].copy(),
            labels=None if series.labels is None else series.labels[lo:hi].copy(),
            timestamps=None if series.timestamps is None else series.timestamps[lo:hi].copy(),
            series_id=f"{series.series_id}/{suffix}",
        )

    return piece(0, cut, "train"), piece(cut, n, "test")


def windows(values: np.ndarray, plan: WindowPlan) -> list[tuple[int, np.ndarray]]:
    """(offset, values) windows at the plan's stride.

    A final short window is kept when it has at least window/4 points;
    otherwise it is merged into the previous window, which then runs to the
    end of the series.
    """
    arr = np.asarray(values, dtype=np.float64)
    n = arr.shape[0]
    if n == 0:
        raise EmptyFile("cannot window an empty series")
    spans: list[tuple[int, int]] = []
    for start in range(0, n, plan.stride):
        spans.append((start, min(start + plan.window, n)))
        if spans[-1][1] == n:
            break
    last_start, last_end = spans[-1]
    if len(spans) > 1 and (last_end - last_start) < plan.window / 4:
        spans.pop()
        spans[-1] = (spans[-1][0], n)
    return [(start, arr[start:end]) for start, end in spans]
