"""Analyst report rendering: per-series figure, CSV of records, Markdown.

Each reported series gets three files next to each other: a PNG line chart
with the detected intervals shaded, a delimited records table, and the
diagnosis rendered as Markdown that links the figure.
"""
from __future__ import annotations

import csv
import os

import numpy as np

from .agents import DiagnosisReport
from .core import Series
from .tools.images import line_chart

CSV_COLUMNS = ("series", "start", "end", "confidence", "types", "severity",
               "evidence")


def _records_to_labels(records, length: int) -> np.ndarray:
    labels = np.zeros(length, dtype=np.int64)
    for rec in records:
        lo = max(0, rec.start)
        hi = min(length - 1, rec.end)
        if lo <= hi:
            labels[lo : hi + 1] = 1
    return labels


def write_figure(series: Series, records, path: str) -> str:
    """Line chart with every detected interval shaded; returns the path."""
    chart = line_chart(
        series.values,
        labels=_records_to_labels(records, series.values.shape[0]),
        title=series.series_id,
    )
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(chart.render_png())
    os.replace(tmp, path)
    return path


def write_csv(rows, path: str) -> str:
    """Delimited records table, one row per (series, record, severity)."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for series_id, confirmed in rows:
            rec = confirmed.record
            types = ";".join(str(int(t)) for t in sorted(rec.types))
            writer.writerow([
                series_id, rec.start, rec.end, f"{rec.confidence:.2f}",
                types, confirmed.severity, rec.evidence,
            ])
    os.replace(tmp, path)
    return path


def write_markdown(series_id: str, report: DiagnosisReport, figure_name: str,
                   path: str) -> str:
    body = report.to_markdown()
    text = (
        f"# {series_id}\n\n![{series_id}]({figure_name})\n\n"
        + body[body.index("\n") + 1 :].lstrip("\n")
    )
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def render_report(series: Series, report: DiagnosisReport, out_dir: str
                  ) -> dict:
    """All three artifacts for one series; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    base = series.series_id
    records = [c.record for c in report.confirmed_anomalies]
    figure = write_figure(series, records, os.path.join(out_dir, f"{base}.png"))
    table = write_csv(
        [(series.series_id, c) for c in report.confirmed_anomalies],
        os.path.join(out_dir, f"{base}.csv"),
    )
    markdown = write_markdown(series.series_id, report, f"{base}.png",
                              os.path.join(out_dir, f"{base}.md"))
    return {"figure": figure, "csv": table, "markdown": markdown}
