"""Contrastive reference database: normal prototypes plus injected variants.

Prototype extraction clusters label-free training segments with k-medoids
(silhouette-chosen k); each medoid gets one injected variant per anomaly
type plus a tool-evidence summary. Retrieval ranks prototypes by banded DTW
with LB_Keogh pruning and returns the variants matching the caller's
candidate types. The database never sees test labels.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import AnomalyType, Series
from .errors import (BandTooNarrow, EmptyDb, LengthMismatch, NoNormalSegments,
                     ParseError, ToolkitError)
from .inject import INJECTORS, Injection

SCHEMA = "icl-db/1"
DEFAULT_SEGMENT_LENGTH = 400
TOP_K = 3
BAND_FRACTION = 0.1
MAX_KEEP_ALL = 12
K_MAX = 20
VARIANT_SEED_STRIDE = 97


# ---------------------------------------------------------------------------
# distances


@njit(cache=True)
def _dtw_banded(a, b, band):
    n = a.size
    m = b.size
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        for j in range(m + 1):
            cur[j] = inf
        lo = i - band
        if lo < 1:
            lo = 1
        hi = i + band
        if hi > m:
            hi = m
        for j in range(lo, hi + 1):
            d = a[i - 1] - b[j - 1]
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = d * d + best
        tmp = prev
        prev = cur
        cur = tmp
    return math.sqrt(prev[m])


@njit(cache=True)
def _lb_keogh(q, c, band):
    total = 0.0
    n = q.size
    for i in range(n):
        lo = i - band
        if lo < 0:
            lo = 0
        hi = i + band + 1
        if hi > n:
            hi = n
        upper = c[lo]
        lower = c[lo]
        for j in range(lo + 1, hi):
            if c[j] > upper:
                upper = c[j]
            if c[j] < lower:
                lower = c[j]
        if q[i] > upper:
            d = q[i] - upper
            total += d * d
        elif q[i] < lower:
            d = lower - q[i]
            total += d * d
    return math.sqrt(total)


def dtw(a, b, band: int) -> float:
    """Banded DTW distance: squared local cost accumulated over the optimal
    monotone alignment, square-rooted at the end."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    band = int(band)
    if band < abs(a.size - b.size):
        raise BandTooNarrow(
            f"band {band} cannot align lengths {a.size} and {b.size}"
        )
    return float(_dtw_banded(a, b, band))


def lb_keogh(query, candidate, band: int) -> float:
    """Envelope lower bound on the banded DTW distance."""
    q = np.ascontiguousarray(query, dtype=np.float64)
    c = np.ascontiguousarray(candidate, dtype=np.float64)
    if q.size != c.size:
        raise LengthMismatch(
            f"query length {q.size} != candidate length {c.size}"
        )
    return float(_lb_keogh(q, c, int(band)))


def znormalize(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    std = float(arr.std())
    if std < 1e-12:
        return np.zeros_like(arr)
    return (arr - arr.mean()) / std


# ---------------------------------------------------------------------------
# k-medoids (PAM) with silhouette-selected k


def _pam_build(dist: np.ndarray, k: int) -> list[int]:
    n = dist.shape[0]
    medoids = [int(np.argmin(dist.sum(axis=1)))]
    while len(medoids) < k:
        nearest = dist[:, medoids].min(axis=1)
        best_gain, best_idx = -np.inf, -1
        for cand in range(n):
            if cand in medoids:
                continue
            gain = float(np.maximum(nearest - dist[:, cand], 0.0).sum())
            if gain > best_gain:
                best_gain, best_idx = gain, cand
        medoids.append(best_idx)
    return sorted(medoids)


def _pam_swap(dist: np.ndarray, medoids: list[int]) -> list[int]:
    n = dist.shape[0]
    medoids = sorted(medoids)
    current = float(dist[:, medoids].min(axis=1).sum())
    while True:
        best_cost, best_pair = current, None
        for mi, m in enumerate(medoids):
            for h in range(n):
                if h in medoids:
                    continue
                trial = medoids[:mi] + medoids[mi + 1 :] + [h]
                cost = float(dist[:, trial].min(axis=1).sum())
                if cost < best_cost - 1e-12:
                    best_cost, best_pair = cost, (mi, h)
        if best_pair is None:
            return medoids
        mi, h = best_pair
        medoids = sorted(medoids[:mi] + medoids[mi + 1 :] + [h])
        current = best_cost


def _silhouette(dist: np.ndarray, assign: np.ndarray, k: int) -> float:
    n = dist.shape[0]
    scores = np.zeros(n)
    for i in range(n):
        own = np.flatnonzero(assign == assign[i])
        if own.size <= 1:
            scores[i] = 0.0
            continue
        a = dist[i, own[own != i]].mean()
        b = np.inf
        for c in range(k):
            if c == assign[i]:
                continue
            members = np.flatnonzero(assign == c)
            if members.size:
                b = min(b, dist[i, members].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def kmedoids_select(dist: np.ndarray) -> tuple[list[int], int]:
    """PAM at every k in [2, min(20, N//2)]; the mean silhouette picks k
    (ties toward the smaller k). Returns (medoid indices, k)."""
    n = dist.shape[0]
    k_hi = min(K_MAX, n // 2)
    best = None
    for k in range(2, k_hi + 1):
        medoids = _pam_swap(dist, _pam_build(dist, k))
        assign = np.argmin(dist[:, medoids], axis=1)
        score = _silhouette(dist, assign, k)
        if best is None or score > best[0] + 1e-12:
            best = (score, medoids, k)
    if best is None:  # n too small for k=2; callers guard with MAX_KEEP_ALL
        return list(range(n)), n
    return best[1], best[2]


# ---------------------------------------------------------------------------
# database construction


@dataclass(frozen=True)
class IclVariant:
    values: np.ndarray = field(repr=False)
    injection: Injection
    evidence: str


@dataclass(frozen=True)
class IclEntry:
    source_id: str
    prototype: np.ndarray = field(repr=False)
    prototype_z: np.ndarray = field(repr=False)
    variants: dict = field(repr=False)  # AnomalyType -> IclVariant
    failures: dict = field(default_factory=dict)  # AnomalyType -> message


@dataclass(frozen=True)
class IclDatabase:
    entries: tuple[IclEntry, ...]
    segment_length: int
    seed: int
    schema: str = SCHEMA

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class IclReference:
    normal: np.ndarray = field(repr=False)
    anomalous: np.ndarray = field(repr=False)
    type: AnomalyType
    evidence: str
    distance: float
    source_id: str = ""

    def prompt_text(self) -> str:
        def excerpt(arr):
            step = max(1, arr.size // 40)
            vals = ", ".join(f"{v:.4g}" for v in arr[::step])
            return f"[{vals}]"

        return (
            f"type {int(self.type)} ({self.type.name}),"
            f" dtw distance {self.distance:.4g}\n"
            f"normal excerpt (every {max(1, self.normal.size // 40)}th value):"
            f" {excerpt(self.normal)}\n"
            f"anomalous excerpt: {excerpt(self.anomalous)}\n"
            f"evidence: {self.evidence}"
        )


def extract_segments(train, segment_length: int) -> list[tuple[str, np.ndarray]]:
    """Non-overlapping full-length windows that touch no labeled point."""
    segments = []
    for series in train:
        n = series.values.shape[0]
        labels = series.labels
        for start in range(0, n - segment_length + 1, segment_length):
            stop = start + segment_length
            if labels is not None and labels[start:stop].any():
                continue
            segments.append(
                (f"{series.series_id}:{start}", series.values[start:stop])
            )
    return segments


def _evidence_text(normal: np.ndarray, variant: np.ndarray) -> str:
    """Deterministic tool-based contrast between a prototype and a variant."""
    from .tools import (autocorrelation_split, change_points, compare_samples,
                        fft_spectrum)

    parts = []
    parts.append(
        f"stats: mean {normal.mean():.4g} -> {variant.mean():.4g},"
        f" std {normal.std():.4g} -> {variant.std():.4g}"
    )
    try:
        report = change_points(variant)
        if report.points:
            first = report.points[0]
            parts.append(
                f"change points: {len(report.points)},"
                f" first at {first.index} ({first.direction})"
            )
        else:
            parts.append("change points: none")
    except ToolkitError as exc:
        parts.append(f"change points: tool failed ({exc})")
    try:
        before = fft_spectrum(normal).dominant_period
        after = fft_spectrum(variant).dominant_period
        parts.append(f"dominant period: {before} -> {after}")
    except ToolkitError as exc:
        parts.append(f"spectrum: tool failed ({exc})")
    try:
        acf = autocorrelation_split(variant)
        parts.append(
            f"acf half-periods: {acf.dominant_period_first}"
            f" / {acf.dominant_period_second}"
            f" ({'changed' if acf.period_changed else 'stable'})"
        )
    except ToolkitError as exc:
        parts.append(f"acf: tool failed ({exc})")
    try:
        cmp = compare_samples(normal, variant)
        parts.append(
            f"vs normal: mean shift {cmp.mean_shift_sigma:+.3g} sigma"
            f" (p {cmp.mean_diff_p:.3g}), variance ratio {cmp.var_ratio:.3g}"
            f" (p {cmp.var_diff_p:.3g})"
        )
    except ToolkitError as exc:
        parts.append(f"segment comparison: tool failed ({exc})")
    return "; ".join(parts)


def _build_entry(source_id: str, prototype: np.ndarray, index: int,
                 seed: int) -> IclEntry:
    variants: dict = {}
    failures: dict = {}
    for atype in AnomalyType:
        variant_seed = seed + VARIANT_SEED_STRIDE * index + int(atype)
        try:
            values, injection = INJECTORS[atype](prototype, variant_seed)
        except ToolkitError as exc:
            failures[atype] = f"{type(exc).__name__}: {exc}"
            continue
        variants[atype] = IclVariant(
            values=values,
            injection=injection,
            evidence=_evidence_text(prototype, values),
        )
    return IclEntry(
        source_id=source_id,
        prototype=np.asarray(prototype, dtype=np.float64),
        prototype_z=znormalize(prototype),
        variants=variants,
        failures=failures,
    )


def build_db(train, segment_length: int = DEFAULT_SEGMENT_LENGTH,
             seed: int = 0) -> IclDatabase:
    """Cluster label-free training segments and attach contrastive variants.

    Twelve or fewer segments are all kept; otherwise PAM medoids over the
    z-normalized segments (Euclidean, silhouette-selected k) become the
    prototypes. Deterministic for a fixed seed.
    """
    segments = extract_segments(train, segment_length)
    if not segments:
        raise NoNormalSegments(
            "no unlabeled training segment of length"
            f" {segment_length} is available"
        )
    if len(segments) > MAX_KEEP_ALL:
        z = np.stack([znormalize(values) for _, values in segments])
        diff = z[:, None, :] - z[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        medoids, _ = kmedoids_select(dist)
        segments = [segments[i] for i in medoids]
    entries = tuple(
        _build_entry(source_id, values, i, seed)
        for i, (source_id, values) in enumerate(segments)
    )
    return IclDatabase(entries=entries, segment_length=segment_length,
                       seed=seed)


# ---------------------------------------------------------------------------
# retrieval


@dataclass
class RetrievalStats:
    candidates: int = 0
    lb_computed: int = 0
    dtw_computed: int = 0
    pruned: int = 0


def _resample(values: np.ndarray, length: int) -> np.ndarray:
    if values.size == length:
        return values
    old = np.linspace(0.0, 1.0, values.size)
    new = np.linspace(0.0, 1.0, length)
    return np.interp(new, old, values)


def rank_prototypes(prototypes_z, query_z, band: int, top_k: int = TOP_K,
                    stats: RetrievalStats | None = None
                    ) -> list[tuple[float, int]]:
    """Rank prototypes against a z-normalized query by banded DTW.

    Prototypes are visited in LB_Keogh order; one whose lower bound exceeds
    the current k-th best exact distance cannot enter the top-k and is
    skipped without a DTW evaluation. Returns the top-k (distance, index)
    pairs sorted ascending, identical to what an exhaustive DTW pass over
    all prototypes would produce.
    """
    if stats is None:
        stats = RetrievalStats()
    stats.candidates += len(prototypes_z)

    bounds = []
    for idx, proto in enumerate(prototypes_z):
        bounds.append((lb_keogh(query_z, proto, band), idx))
        stats.lb_computed += 1
    bounds.sort()

    top: list[tuple[float, int]] = []  # (distance, prototype index), sorted
    for bound, idx in bounds:
        if len(top) >= top_k and bound > top[top_k - 1][0]:
            stats.pruned += 1
            continue
        d = dtw(query_z, prototypes_z[idx], band)
        stats.dtw_computed += 1
        top.append((d, idx))
        top.sort()
        del top[top_k:]
    return top


def retrieve(db: IclDatabase, query, candidate_types=None,
             top_k: int = TOP_K, stats: RetrievalStats | None = None
             ) -> list[IclReference]:
    """Top-k nearest prototypes by banded DTW, pruned with LB_Keogh.

    Prototypes are visited in lower-bound order; one whose bound exceeds the
    current k-th best exact distance is skipped without a DTW evaluation.
    The returned references are grouped by prototype (nearest first) and
    filtered to the candidate types (None means all types).
    """
    if not db.entries:
        raise EmptyDb("the reference database holds no entries")
    if candidate_types is None:
        types = set(AnomalyType)
    else:
        types = {AnomalyType(int(t)) for t in candidate_types}

    q = znormalize(_resample(np.asarray(query, dtype=np.float64),
                             db.segment_length))
    band = math.ceil(BAND_FRACTION * db.segment_length)
    top = rank_prototypes([e.prototype_z for e in db.entries], q, band,
                          top_k=top_k, stats=stats)

    references = []
    for d, idx in top:
        entry = db.entries[idx]
        for atype in sorted(types):
            variant = entry.variants.get(atype)
            if variant is None:
                continue
            references.append(IclReference(
                normal=entry.prototype,
                anomalous=variant.values,
                type=atype,
                evidence=variant.evidence,
                distance=d,
                source_id=entry.source_id,
            ))
    return references


# ---------------------------------------------------------------------------
# persistence


def _entry_to_json(entry: IclEntry) -> dict:
    variants = {}
    for atype, variant in entry.variants.items():
        variants[str(int(atype))] = {
            "values": [float(v) for v in variant.values],
            "injection": variant.injection.to_json(),
            "evidence": variant.evidence,
        }
    for atype, message in entry.failures.items():
        variants[str(int(atype))] = {"error": message}
    return {
        "source": entry.source_id,
        "prototype": [float(v) for v in entry.prototype],
        "prototype_z": [float(v) for v in entry.prototype_z],
        "variants": variants,
    }


def _entry_from_json(data: dict) -> IclEntry:
    variants: dict = {}
    failures: dict = {}
    for key, item in data["variants"].items():
        atype = AnomalyType(int(key))
        if "error" in item:
            failures[atype] = item["error"]
            continue
        variants[atype] = IclVariant(
            values=np.asarray(item["values"], dtype=np.float64),
            injection=Injection.from_json(item["injection"]),
            evidence=item["evidence"],
        )
    return IclEntry(
        source_id=data["source"],
        prototype=np.asarray(data["prototype"], dtype=np.float64),
        prototype_z=np.asarray(data["prototype_z"], dtype=np.float64),
        variants=variants,
        failures=failures,
    )


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_db(db: IclDatabase, directory: str) -> str:
    """Directory layout: manifest.json plus one JSON file per entry."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "schema": db.schema,
        "segment_length": db.segment_length,
        "seed": db.seed,
        "entries": [],
    }
    for i, entry in enumerate(db.entries):
        name = f"entry-{i:04d}.json"
        _atomic_write(os.path.join(directory, name),
                      json.dumps(_entry_to_json(entry)))
        manifest["entries"].append({"file": name, "source": entry.source_id})
    path = os.path.join(directory, "manifest.json")
    _atomic_write(path, json.dumps(manifest, indent=2))
    return path


def load_db(directory: str) -> IclDatabase:
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise EmptyDb(f"no manifest.json under {directory}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest.json is not valid JSON: {exc}") from None
    if manifest.get("schema") != SCHEMA:
        raise ParseError(
            f"unsupported database schema {manifest.get('schema')!r},"
            f" expected {SCHEMA!r}"
        )
    entries = []
    for item in manifest["entries"]:
        with open(os.path.join(directory, item["file"]), encoding="utf-8") as fh:
            entries.append(_entry_from_json(json.load(fh)))
    return IclDatabase(
        entries=tuple(entries),
        segment_length=int(manifest["segment_length"]),
        seed=int(manifest["seed"]),
        schema=manifest["schema"],
    )
