"""Rule-based anomaly injectors and the synthetic benchmark generator.

Every injector is a pure function of (values, seed). Randomness comes from
numpy's default_rng (PCG64), and each docstring records the exact draw order
so a test can replay the generator stream and predict outputs bit-for-bit.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import AnomalyType, Interval, Series, segments_to_labels
from .errors import DataError, DegenerateSigma, NoPeriod
from .tools.spectral import estimate_period

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
POINT_EDGE_MARGIN = 5
POINT_MIN_SEPARATION = 10
GLOBAL_MAGNITUDE = 5.0
CONTEXTUAL_MAGNITUDE = 3.0
AMPLITUDE_FACTOR = 2.0
SEASONALITY_FREQ_FACTOR = 2.5
SEASONALITY_FLATTEN = 0.15
TREND_SLOPE_FRACTION = 0.05
TREND_SLOPE_FLOOR = 0.05
STRONG_TREND_SLOPE = 0.02
MEAN_SHIFT_SIGMA = 1.5
VARIANCE_FACTORS = (2.0, 2.5)
WAVEFORM_BAND = 0.5
RETRY_STRIDE = 1_000_003


@dataclass(frozen=True)
class Injection:
    """What an injector actually did: type, labeled region, realized params."""

    type: AnomalyType
    ground_truth: tuple[Interval, ...]
    params: dict
    seed: int

    def to_json(self) -> dict:
        return {
            "type": int(self.type),
            "ground_truth": [[iv.start, iv.end] for iv in self.ground_truth],
            "params": dict(self.params),
            "seed": self.seed,
        }

    @staticmethod
    def from_json(obj: dict) -> "Injection":
        return Injection(
            type=AnomalyType(obj["type"]),
            ground_truth=tuple(Interval(s, e) for s, e in obj["ground_truth"]),
            params=dict(obj["params"]),
            seed=int(obj["seed"]),
        )


def _as_array(x) -> np.ndarray:
    return np.array(x, dtype=np.float64, copy=True)


def _require_sigma(arr: np.ndarray) -> float:
    sigma = float(arr.std())
    if sigma < SIGMA_FLOOR:
        raise DegenerateSigma("input spread below 1e-12")
    return sigma


def _draw_positions(rng, n: int, count: int) -> list[int]:
    # one uniform draw per attempt; an attempt conflicting with the minimum
    # separation is discarded and redrawn (draw order is still deterministic)
    chosen: list[int] = []
    attempts = 0
    while len(chosen) < count and attempts < 200:
        pos = int(rng.integers(POINT_EDGE_MARGIN, n - POINT_EDGE_MARGIN))
        attempts += 1
        if all(abs(pos - c) >= POINT_MIN_SEPARATION for c in chosen):
            chosen.append(pos)
    if not chosen:
        raise DegenerateSigma("could not place any isolated position")
    return sorted(chosen)


def inject_global_point(x, seed: int):
    """Shift 1-3 isolated points by +-5 sigma.

    Draw order: count (integers 1..3), then position attempts (integers over
    the margin-clipped range, redrawn on separation conflicts), then one sign
    per position in position-sorted order (integers 0..1, 1 maps to +).
    """
    arr = _as_array(x)
    n = arr.size
    sigma = _require_sigma(arr)
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, 4))
    positions = _draw_positions(rng, n, count)
    params: dict = {"magnitude": GLOBAL_MAGNITUDE * sigma, "count": float(len(positions))}
    for k, pos in enumerate(positions):
        sign = 1.0 if int(rng.integers(0, 2)) else -1.0
        arr[pos] += sign * GLOBAL_MAGNITUDE * sigma
        params[f"position_{k}"] = float(pos)
        params[f"sign_{k}"] = sign
    gt = tuple(Interval(p, p) for p in positions)
    return arr, Injection(AnomalyType.GLOBAL_POINT, gt, params, seed)


def _local_std(arr: np.ndarray, i: int, w: int) -> float:
    lo = max(0, i - w // 2)
    hi = min(arr.size, i - w // 2 + w)
    return float(arr[lo:hi].std())


def inject_contextual_point(x, seed: int):
    """Shift 1-3 isolated points by +-3x their pre-injection local std.

    The local std is taken over a centered window of width max(10, n // 20),
    truncated at the edges. Draw order matches inject_global_point: count,
    position attempts, then one sign per position in sorted order.
    """
    arr = _as_array(x)
    n = arr.size
    _require_sigma(arr)
    w = max(10, n // 20)
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, 4))
    positions = _draw_positions(rng, n, count)
    params = {"window": float(w), "count": float(len(positions))}
    shifts = []
    for pos in positions:
        s = _local_std(arr, pos, w)
        if s < SIGMA_FLOOR:
            raise DegenerateSigma(f"flat local window at index {pos}")
        shifts.append(s)
    for k, (pos, s) in enumerate(zip(positions, shifts)):
        sign = 1.0 if int(rng.integers(0, 2)) else -1.0
        arr[pos] += sign * CONTEXTUAL_MAGNITUDE * s
        params[f"position_{k}"] = float(pos)
        params[f"sign_{k}"] = sign
        params[f"local_std_{k}"] = s
    gt = tuple(Interval(p, p) for p in positions)
    return arr, Injection(AnomalyType.CONTEXTUAL_POINT, gt, params, seed)


def inject_amplitude_change(x, seed: int):
    """Scale second-half deviations from the second-half mean by 2.0.

    Deterministic (no draws); the seed is recorded for provenance only.
    """
    arr = _as_array(x)
    n = arr.size
    _require_sigma(arr)
    half = n // 2
    m = float(arr[half:].mean())
    arr[half:] = m + AMPLITUDE_FACTOR * (arr[half:] - m)
    params = {"factor": AMPLITUDE_FACTOR, "segment_mean": m, "start": float(half)}
    gt = (Interval(half, n - 1),)
    return arr, Injection(AnomalyType.AMPLITUDE_CHANGE, gt, params, seed)


def inject_seasonality(x, seed: int):
    """Disturb the second half's seasonality.

    Variant A resamples the second half's phase at 2.5x the detected
    frequency (circular linear interpolation); variant B flattens deviations
    from the second-half mean to 15% and adds Normal(0, (0.15 sigma)^2)
    noise. Draw order: variant (integers 0..1, 0 = A), then for variant B one
    normal draw per second-half point. A base with no usable period falls
    back to variant B after the variant draw.
    """
    arr = _as_array(x)
    n = arr.size
    sigma = _require_sigma(arr)
    half = n // 2
    rng = np.random.default_rng(seed)
    variant_a = int(rng.integers(0, 2)) == 0
    period = estimate_period(arr) if variant_a else None
    if variant_a and period is not None:
        second = arr[half:]
        m = second.size
        pos = (SEASONALITY_FREQ_FACTOR * np.arange(m)) % m
        wrapped = np.concatenate([second, second[:1]])
        arr[half:] = np.interp(pos, np.arange(m + 1), wrapped)
        params = {"variant_b": 0.0, "period": float(period),
                  "frequency_factor": SEASONALITY_FREQ_FACTOR}
    else:
        m = float(arr[half:].mean())
        noise = rng.normal(0.0, SEASONALITY_FLATTEN * sigma, size=n - half)
        arr[half:] = m + SEASONALITY_FLATTEN * (arr[half:] - m) + noise
        params = {"variant_b": 1.0, "flatten": SEASONALITY_FLATTEN,
                  "noise_sigma": SEASONALITY_FLATTEN * sigma, "segment_mean": m}
    gt = (Interval(half, n - 1),)
    return arr, Injection(AnomalyType.SEASONALITY_ANOMALY, gt, params, seed)


def inject_trend_change(x, seed: int):
    """Add a linear ramp of slope +-max(0.05 sigma, 0.05) from the midpoint.

    The sign opposes a pre-existing least-squares trend when its slope
    magnitude exceeds 0.02x the detrended residual std per step (against the
    total std no realistic trend would ever qualify, since the trend itself
    inflates it); otherwise the sign is uniform. Draw order: the sign draw
    (integers 0..1) happens only in the no-strong-trend case. Never raises
    DegenerateSigma: the absolute slope floor keeps the ramp visible on a
    flat base.
    """
    arr = _as_array(x)
    n = arr.size
    sigma = float(arr.std())
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    fit = np.polyfit(t, arr, 1)
    base_slope = float(fit[0])
    residual_std = float((arr - np.polyval(fit, t)).std())
    magnitude = max(TREND_SLOPE_FRACTION * sigma, TREND_SLOPE_FLOOR)
    strong = abs(base_slope) > STRONG_TREND_SLOPE * max(residual_std, SIGMA_FLOOR)
    if strong:
        sign = -1.0 if base_slope > 0 else 1.0
    else:
        sign = 1.0 if int(rng.integers(0, 2)) else -1.0
    slope = sign * magnitude
    half = n // 2
    arr[half:] += slope * (np.arange(half, n) - half)
    params = {"slope": slope, "start": float(half), "base_slope": base_slope}
    gt = (Interval(half, n - 1),)
    return arr, Injection(AnomalyType.TREND_CHANGE, gt, params, seed)


def inject_mean_change(x, seed: int):
    """Shift the suffix from a uniform change point in [0.4n, 0.6n] by 1.5 sigma.

    Draw order: change point (integers over the inclusive [ceil(0.4n),
    floor(0.6n)] range), then sign (integers 0..1).
    """
    arr = _as_array(x)
    n = arr.size
    sigma = _require_sigma(arr)
    rng = np.random.default_rng(seed)
    lo = math.ceil(0.4 * n)
    hi = math.floor(0.6 * n)
    cp = int(rng.integers(lo, hi + 1))
    sign = 1.0 if int(rng.integers(0, 2)) else -1.0
    shift = sign * MEAN_SHIFT_SIGMA * sigma
    arr[cp:] += shift
    params = {"change_point": float(cp), "shift": shift}
    gt = (Interval(cp, n - 1),)
    return arr, Injection(AnomalyType.MEAN_CHANGE_POINT, gt, params, seed)


def inject_variance_change(x, seed: int):
    """Scale suffix deviations from the suffix mean by 2.0 or 2.5.

    Draw order: change point (as in inject_mean_change), then factor
    (integers 0..1 indexing {2.0, 2.5}).
    """
    arr = _as_array(x)
    n = arr.size
    _require_sigma(arr)
    rng = np.random.default_rng(seed)
    lo = math.ceil(0.4 * n)
    hi = math.floor(0.6 * n)
    cp = int(rng.integers(lo, hi + 1))
    factor = VARIANCE_FACTORS[int(rng.integers(0, 2))]
    m = float(arr[cp:].mean())
    arr[cp:] = m + factor * (arr[cp:] - m)
    params = {"change_point": float(cp), "factor": factor, "segment_mean": m}
    gt = (Interval(cp, n - 1),)
    return arr, Injection(AnomalyType.VARIANCE_CHANGE, gt, params, seed)


def inject_pattern_shift(x, seed: int):
    """Circularly shift the second half right by a quarter of the period.

    Deterministic (no draws). Raises NoPeriod when no usable period is
    detected or the period is below 4.
    """
    arr = _as_array(x)
    n = arr.size
    period = estimate_period(arr)
    if period is None or period < 4:
        raise NoPeriod("pattern shift needs a detected period of at least 4")
    half = n // 2
    shift = period // 4
    arr[half:] = np.roll(arr[half:], shift)
    params = {"period": float(period), "shift": float(shift), "start": float(half)}
    gt = (Interval(half, n - 1),)
    return arr, Injection(AnomalyType.PATTERN_SHIFT, gt, params, seed)


def inject_waveform_distortion(x, seed: int):
    """Clamp [0.4n, 0.7n) to its pre-injection mean +- 0.5 std band.

    Deterministic (no draws); an already-flat region is left unchanged.
    """
    arr = _as_array(x)
    n = arr.size
    lo = int(0.4 * n)
    hi = int(0.7 * n)
    region = arr[lo:hi]
    mu = float(region.mean())
    s = float(region.std())
    arr[lo:hi] = np.clip(region, mu - WAVEFORM_BAND * s, mu + WAVEFORM_BAND * s)
    params = {"start": float(lo), "end": float(hi - 1), "mean": mu, "band": WAVEFORM_BAND * s}
    gt = (Interval(lo, hi - 1),)
    return arr, Injection(AnomalyType.WAVEFORM_DISTORTION, gt, params, seed)


INJECTORS = {
    AnomalyType.GLOBAL_POINT: inject_global_point,
    AnomalyType.CONTEXTUAL_POINT: inject_contextual_point,
    AnomalyType.AMPLITUDE_CHANGE: inject_amplitude_change,
    AnomalyType.SEASONALITY_ANOMALY: inject_seasonality,
    AnomalyType.TREND_CHANGE: inject_trend_change,
    AnomalyType.MEAN_CHANGE_POINT: inject_mean_change,
    AnomalyType.VARIANCE_CHANGE: inject_variance_change,
    AnomalyType.PATTERN_SHIFT: inject_pattern_shift,
    AnomalyType.WAVEFORM_DISTORTION: inject_waveform_distortion,
}

BASE_KINDS = ("sin", "trendsin", "noise")
DEFAULT_BASE_LENGTH = 400


def _default_base(kind: str, n: int, rng) -> np.ndarray:
    t = np.arange(n, dtype=np.float64)
    if kind == "sin":
        return np.sin(2 * np.pi * t / 20) + 0.1 * rng.normal(size=n)
    if kind == "trendsin":
        return 0.01 * t + np.sin(2 * np.pi * t / 20) + 0.1 * rng.normal(size=n)
    return rng.normal(size=n)


def generate_benchmark(bases=None, per_type: int = 10, seed: int = 0,
                       length: int = DEFAULT_BASE_LENGTH):
    """Balanced per-type synthetic benchmark.

    Returns a list of (Series, Injection) pairs, per_type samples for each of
    the nine types. Without explicit bases, sample k rotates through
    sin / trend-plus-sin / noise bases. Sample seeds derive as seed XOR
    sample_index; a failed injection (e.g. pattern shift on a noise base)
    retries with the seed advanced by a large stride and the base rotated,
    so per-type counts stay balanced. Unrecoverable samples are logged and
    skipped.
    """
    out = []
    sample_index = 0
    for atype in AnomalyType:
        injector = INJECTORS[atype]
        for _ in range(per_type):
            sample_seed = seed ^ sample_index
            placed = False
            for attempt in range(12):
                s = sample_seed + RETRY_STRIDE * attempt
                if bases is not None:
                    base = np.asarray(
                        bases[(sample_index + attempt) % len(bases)].values,
                        dtype=np.float64,
                    )
                else:
                    kind = BASE_KINDS[(sample_index + attempt) % len(BASE_KINDS)]
                    base = _default_base(kind, length, np.random.default_rng(s))
                try:
                    values, injection = injector(base, s)
                except (DegenerateSigma, NoPeriod) as exc:
                    log.debug("retry %s sample %d: %s", atype.name, sample_index, exc)
                    continue
                labels = segments_to_labels(injection.ground_truth, values.size)
                series = Series(
                    values=values,
                    labels=labels,
                    series_id=f"{atype.name.lower()}-{sample_index:04d}",
                )
                out.append((series, injection))
                placed = True
                break
            if not placed:
                log.warning("skipped %s sample %d: no base accepted the injection",
                            atype.name, sample_index)
            sample_index += 1
    return out


def export_benchmark(samples, directory: str) -> str:
    """Write one JSON-lines file per sample plus a manifest; returns the
    manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for series, injection in samples:
        name = f"{series.series_id}.jsonl"
        record = {
            "id": series.series_id,
            "values": [float(v) for v in series.values],
            "labels": [int(v) for v in series.labels],
            "type": int(injection.type),
            "ground_truth": [[iv.start, iv.end] for iv in injection.ground_truth],
            "seed": injection.seed,
            "params": dict(injection.params),
        }
        path = os.path.join(directory, name)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
        os.replace(tmp, path)
        entries.append({"file": name, "id": series.series_id, "type": int(injection.type)})
    manifest_path = os.path.join(directory, "manifest.json")
    tmp = manifest_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump({"samples": entries}, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, manifest_path)
    return manifest_path


def load_benchmark(directory: str):
    """Read an exported benchmark directory back into (Series, Injection)
    pairs, in manifest order."""
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no manifest.json in {directory}") from None
    out = []
    for entry in manifest["samples"]:
        with open(os.path.join(directory, entry["file"]), encoding="utf-8") as fh:
            record = json.loads(fh.readline())
        series = Series(
            values=np.array(record["values"], dtype=np.float64),
            labels=np.array(record["labels"], dtype=np.int8),
            series_id=record["id"],
        )
        injection = Injection(
            type=AnomalyType(record["type"]),
            ground_truth=tuple(Interval(s, e) for s, e in record["ground_truth"]),
            params=dict(record["params"]),
            seed=int(record["seed"]),
        )
        out.append((series, injection))
    return out
