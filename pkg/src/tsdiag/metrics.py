"""Detection metrics, best-threshold search, and the type-evaluation protocol.

Four point/event metrics share the PRF container: pointwise F1, the
point-adjusted variant, a delay-limited variant, and the affiliation metric
built on zone survival functions. Dataset aggregation micro-averages counts
per series so series order never matters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import detector
from .core import AnomalyFamily, AnomalyType, Interval
from .errors import LengthMismatch, NoGroundTruthEvents

DELAY_K = 3
THRESHOLD_SENTINEL = 1.01  # above every confidence: "predict nothing"
METRIC_IDS = ("point", "pa", "affiliation", "delayed")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, int(tp), int(fp), int(fn))

    def to_json(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "tp": self.tp, "fp": self.fp, "fn": self.fn}


def _as_binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    return (arr != 0).astype(np.int8)


def _check_lengths(pred: np.ndarray, gt: np.ndarray):
    if pred.shape[0] != gt.shape[0]:
        raise LengthMismatch(
            f"prediction length {pred.shape[0]} != ground truth {gt.shape[0]}"
        )


def segments(labels) -> list[Interval]:
    """Maximal runs of nonzero labels as inclusive intervals."""
    arr = _as_binary(labels, "labels")
    padded = np.concatenate([[0], arr, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    return [Interval(int(s), int(e)) for s, e in zip(starts, ends)]


def _counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    tp = int(np.sum((pred == 1) & (gt == 1)))
    fp = int(np.sum((pred == 1) & (gt == 0)))
    fn = int(np.sum((pred == 0) & (gt == 1)))
    return tp, fp, fn


def point_f1(pred, gt) -> PRF:
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    _check_lengths(pred, gt)
    return PRF.from_counts(*_counts(pred, gt))


def _pa_adjust(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    adjusted = pred.copy()
    for seg in segments(gt):
        if adjusted[seg.start : seg.end + 1].any():
            adjusted[seg.start : seg.end + 1] = 1
    return adjusted


def pa_f1(pred, gt) -> PRF:
    """Point-adjusted F1: a ground-truth segment with at least one predicted
    point is credited in full; predictions outside segments stay pointwise
    false positives."""
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    _check_lengths(pred, gt)
    return PRF.from_counts(*_counts(_pa_adjust(pred, gt), gt))


def _delayed_adjust(pred: np.ndarray, gt: np.ndarray, k: int) -> np.ndarray:
    adjusted = pred.copy()
    for seg in segments(gt):
        inside = np.flatnonzero(adjusted[seg.start : seg.end + 1])
        if inside.size and inside[0] <= k:
            adjusted[seg.start : seg.end + 1] = 1
        else:
            # missed the detection deadline: the segment is a full miss and
            # late predictions inside it are discarded, not false positives
            adjusted[seg.start : seg.end + 1] = 0
    return adjusted


def delayed_f1(pred, gt, k: int = DELAY_K) -> PRF:
    """Delay-limited point-adjusted F1: a segment only counts as detected
    when its earliest predicted point lies within k steps of the segment
    start."""
    if k < 0:
        raise ValueError("k must be >= 0")
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    _check_lengths(pred, gt)
    return PRF.from_counts(*_counts(_delayed_adjust(pred, gt, k), gt))


def _event_distances(positions: np.ndarray, event: Interval) -> np.ndarray:
    below = np.maximum(event.start - positions, 0)
    above = np.maximum(positions - event.end, 0)
    return np.maximum(below, above)


def _zone_stats(pred: np.ndarray, gt: np.ndarray):
    """Per-zone survival precision/recall lists for the affiliation metric.

    Zones partition positions by nearest event (ties to the earlier event).
    Returns (zone_precisions for zones holding predictions, zone_recalls for
    every zone).
    """
    events = segments(gt)
    if not events:
        raise NoGroundTruthEvents("affiliation needs at least one labeled event")
    n = gt.shape[0]
    positions = np.arange(n)
    dists = np.stack([_event_distances(positions, ev) for ev in events])
    zone_of = np.argmin(dists, axis=0)  # first minimum -> earlier event

    zone_precisions: list[float] = []
    zone_recalls: list[float] = []
    for j, ev in enumerate(events):
        zone = positions[zone_of == j]
        zone_d = _event_distances(zone, ev)
        preds_in = zone[pred[zone] == 1]
        if preds_in.size == 0:
            zone_recalls.append(0.0)
            continue
        pred_d = _event_distances(preds_in, ev)
        survive = (zone_d[None, :] >= pred_d[:, None]).mean(axis=1)
        zone_precisions.append(float(survive.mean()))
        ys = np.arange(ev.start, ev.end + 1)
        d_y = np.abs(preds_in[:, None] - ys[None, :]).min(axis=0)
        survive_y = (np.abs(zone[None, :] - ys[:, None]) >= d_y[:, None]).mean(axis=1)
        zone_recalls.append(float(survive_y.mean()))
    return zone_precisions, zone_recalls


def _aff_prf(zone_precisions, zone_recalls) -> PRF:
    precision = float(np.mean(zone_precisions)) if zone_precisions else 0.0
    recall = float(np.mean(zone_recalls)) if zone_recalls else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    tp = len(zone_precisions)
    fn = len(zone_recalls) - tp
    return PRF(precision, recall, f1, tp, 0, fn)


def affiliation_f1(pred, gt) -> PRF:
    """Affiliation metric on zone survival functions.

    Precision averages, over predicted points, the fraction of their zone at
    least as far from the event as the prediction; recall does the analogous
    average around each ground-truth point using the nearest in-zone
    prediction. Counts are in zone units: a zone with predictions is a tp,
    one without is a fn.
    """
    pred = _as_binary(pred, "pred")
    gt = _as_binary(gt, "gt")
    _check_lengths(pred, gt)
    return _aff_prf(*_zone_stats(pred, gt))


_METRIC_FNS = {
    "point": lambda pred, gt, k: point_f1(pred, gt),
    "pa": lambda pred, gt, k: pa_f1(pred, gt),
    "delayed": lambda pred, gt, k: delayed_f1(pred, gt, k),
    "affiliation": lambda pred, gt, k: affiliation_f1(pred, gt),
}


def _candidate_thresholds(records) -> np.ndarray:
    confs = sorted({r.confidence for r in records})
    return np.asarray([0.0] + confs + [THRESHOLD_SENTINEL])


def best_f1_search(records, gt, metric: str = "point",
                   k: int = DELAY_K) -> tuple[float, PRF]:
    """Post-hoc threshold search for one series.

    Candidate thresholds are the unique record confidences plus 0 and a
    sentinel above every confidence (empty prediction). Ascending scan with
    ties resolved toward the higher threshold. With no records the sentinel
    and its empty prediction are returned.
    """
    if metric not in _METRIC_FNS:
        raise ValueError(f"unknown metric id: {metric!r}")
    gt = _as_binary(gt, "gt")
    n = gt.shape[0]
    fn = _METRIC_FNS[metric]
    best_tau, best_prf = None, None
    for tau in _candidate_thresholds(records):
        pred = detector.threshold(records, float(tau), n)
        prf = fn(pred, gt, k)
        if best_prf is None or prf.f1 >= best_prf.f1:
            best_tau, best_prf = float(tau), prf
    return best_tau, best_prf


# ---------------------------------------------------------------------------
# dataset-level evaluation


@dataclass(frozen=True)
class SeriesResult:
    series_id: str
    records: tuple
    labels: np.ndarray = field(repr=False)


def _dataset_prf(results, tau: float, metric: str, k: int):
    """Micro-averaged metric across series at one threshold.

    Counts accumulate per series so no segment or affiliation zone ever
    crosses a series boundary; affiliation pools every zone across series
    and returns None when no series carries a labeled event.
    """
    if metric == "affiliation":
        all_prec: list[float] = []
        all_rec: list[float] = []
        any_events = False
        for res in results:
            gt = _as_binary(res.labels, "gt")
            if not segments(gt):
                continue
            any_events = True
            pred = detector.threshold(res.records, tau, gt.shape[0])
            zp, zr = _zone_stats(pred, gt)
            all_prec.extend(zp)
            all_rec.extend(zr)
        if not any_events:
            return None
        return _aff_prf(all_prec, all_rec)
    fn = _METRIC_FNS[metric]
    tp = fp = fnc = 0
    for res in results:
        gt = _as_binary(res.labels, "gt")
        pred = detector.threshold(res.records, tau, gt.shape[0])
        prf = fn(pred, gt, k)
        tp += prf.tp
        fp += prf.fp
        fnc += prf.fn
    return PRF.from_counts(tp, fp, fnc)


@dataclass(frozen=True)
class EvalReport:
    metrics: dict
    thresholds: dict
    per_series: dict

    def to_json(self) -> dict:
        return {
            "metrics": {m: (p.to_json() if p else None)
                        for m, p in self.metrics.items()},
            "thresholds": dict(self.thresholds),
            "per_series": {
                sid: {m: (p.to_json() if p else None) for m, p in row.items()}
                for sid, row in self.per_series.items()
            },
        }

    def render_table(self) -> str:
        cols = [("point", "Pt"), ("pa", "PA"),
                ("affiliation", "Aff"), ("delayed", "Del")]
        header = f"{'series':<24}" + "".join(f"{label:>8}" for _, label in cols)
        lines = [header, "-" * len(header)]

        def fmt(prf):
            return f"{prf.f1:8.3f}" if prf is not None else f"{'-':>8}"

        lines.append(f"{'ALL':<24}" + "".join(
            fmt(self.metrics.get(m)) for m, _ in cols
        ))
        for sid in sorted(self.per_series):
            row = self.per_series[sid]
            lines.append(f"{sid:<24.24}" + "".join(
                fmt(row.get(m)) for m, _ in cols
            ))
        taus = []
        for m, label in cols:
            tau = self.thresholds.get(m)
            taus.append(f"{label}={tau:.2f}" if tau is not None else f"{label}=-")
        lines.append("thresholds: " + " ".join(taus))
        return "\n".join(lines)


def evaluate_dataset(results, metric_ids=METRIC_IDS, k: int = DELAY_K,
                     tau: float | None = None) -> EvalReport:
    """Dataset evaluation, searched or at a fixed threshold.

    With tau None, one threshold search per metric over the pooled candidate
    confidences; otherwise every metric is evaluated at the given tau. The
    per-series breakdown is computed at the dataset's chosen threshold.
    """
    results = list(results)
    all_records = [r for res in results for r in res.records]
    taus = [tau] if tau is not None else _candidate_thresholds(all_records)

    metrics: dict = {}
    thresholds: dict = {}
    for metric in metric_ids:
        best_tau, best_prf = None, None
        for cand in taus:
            prf = _dataset_prf(results, float(cand), metric, k)
            if prf is None:
                break
            if best_prf is None or prf.f1 >= best_prf.f1:
                best_tau, best_prf = float(cand), prf
        metrics[metric] = best_prf
        thresholds[metric] = best_tau

    per_series: dict = {}
    for res in results:
        gt = _as_binary(res.labels, "gt")
        row: dict = {}
        for metric in metric_ids:
            tau = thresholds.get(metric)
            if tau is None:
                row[metric] = None
                continue
            pred = detector.threshold(res.records, tau, gt.shape[0])
            if metric == "affiliation":
                if not segments(gt):
                    row[metric] = None
                    continue
                row[metric] = _aff_prf(*_zone_stats(pred, gt))
            else:
                row[metric] = _METRIC_FNS[metric](pred, gt, k)
        per_series[res.series_id] = row
    return EvalReport(metrics=metrics, thresholds=thresholds,
                      per_series=per_series)


# ---------------------------------------------------------------------------
# synthetic type evaluation


@dataclass(frozen=True)
class TypeEvalCase:
    """One benchmark sample's outputs: what was injected, what the detector
    emitted, and the evidence intervals each analyzer family produced."""

    injection: object
    records: tuple
    family_intervals: dict


@dataclass(frozen=True)
class TypeEvalRow:
    n: int
    detected: int
    agreed: int

    @property
    def recall(self) -> float:
        return self.detected / self.n if self.n else 0.0

    @property
    def agreement(self):
        return self.agreed / self.detected if self.detected else None

    def to_json(self) -> dict:
        return {"n": self.n, "detected": self.detected, "agreed": self.agreed,
                "recall": self.recall, "agreement": self.agreement}


@dataclass(frozen=True)
class TypeEvalReport:
    per_type: dict
    per_family: dict

    def to_json(self) -> dict:
        return {
            "per_type": {t.name: row.to_json() for t, row in self.per_type.items()},
            "per_family": {f.name: row.to_json()
                           for f, row in self.per_family.items()},
        }


def _representative(records):
    return max(records, key=lambda r: (r.confidence, -r.start))


def type_eval(cases) -> TypeEvalReport:
    """Detection recall and type agreement per injected type and family.

    A sample counts as detected when the injected type's own analyzer family
    produced at least one evidence interval overlapping the ground truth.
    Agreement is judged over detected samples only: the representative record
    is the highest-confidence one (earliest on ties), and it agrees when it
    carries the injected type. A detected sample with no records disagrees.
    """
    tallies: dict = {}
    for case in cases:
        injected = case.injection.type
        family = injected.family
        tally = tallies.setdefault(injected, [0, 0, 0])
        tally[0] += 1
        intervals = case.family_intervals.get(family, ())
        detected = any(
            iv.start <= gt.end and gt.start <= iv.end
            for iv in intervals for gt in case.injection.ground_truth
        )
        if not detected:
            continue
        tally[1] += 1
        if case.records and injected in _representative(case.records).types:
            tally[2] += 1

    per_type = {t: TypeEvalRow(*tallies[t]) for t in sorted(tallies)}
    fam_tallies: dict = {}
    for t, row in per_type.items():
        agg = fam_tallies.setdefault(t.family, [0, 0, 0])
        agg[0] += row.n
        agg[1] += row.detected
        agg[2] += row.agreed
    per_family = {
        f: TypeEvalRow(*fam_tallies[f])
        for f in AnomalyFamily if f in fam_tallies
    }
    return TypeEvalReport(per_type=per_type, per_family=per_family)
