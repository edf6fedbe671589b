"""Moment statistics, outlier detection, rolling statistics, differencing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import TooShort

Z_THRESHOLD = 3.0
IQR_FACTOR = 1.5
LOCAL_Z_THRESHOLD = 2.5
DEFAULT_SCALES = (10, 25, 50)


@dataclass(frozen=True)
class StatsSummary:
    """Population moments and linearly interpolated quartiles."""

    n: int
    mean: float
    std: float
    minimum: float
    maximum: float
    skewness: float
    kurtosis: float  # excess kurtosis; 0 for a constant series by convention
    q1: float
    median: float
    q3: float

    def describe(self) -> str:
        return (
            f"n={self.n} mean={self.mean:.4g} std={self.std:.4g} "
            f"min={self.minimum:.4g} max={self.maximum:.4g} "
            f"skew={self.skewness:.3g} kurt={self.kurtosis:.3g}"
        )


@dataclass(frozen=True)
class OutlierReport:
    z_indices: tuple[tuple[int, float], ...]  # (index, z-score), |z| >= z_threshold
    iqr_indices: tuple[int, ...]
    z_threshold: float
    iqr_multiplier: float
    lower_fence: float
    upper_fence: float

    def flagged(self) -> tuple[int, ...]:
        return tuple(sorted({i for i, _ in self.z_indices} | set(self.iqr_indices)))


@dataclass(frozen=True)
class RollingReport:
    scales: dict  # window -> (means, stds)
    candidates: tuple[tuple[int, float], ...]  # (index, max local |z|)


def statistics(x) -> StatsSummary:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise TooShort("statistics needs a non-empty sequence")
    mean = float(arr.mean())
    std = float(arr.std())
    if std < 1e-300:
        skew = kurt = 0.0
    else:
        z = (arr - mean) / std
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4) - 3.0)
    q1, med, q3 = (float(v) for v in np.percentile(arr, [25, 50, 75]))
    return StatsSummary(
        n=int(arr.size),
        mean=mean,
        std=std,
        minimum=float(arr.min()),
        maximum=float(arr.max()),
        skewness=skew,
        kurtosis=kurt,
        q1=q1,
        median=med,
        q3=q3,
    )


def detect_outliers(x) -> OutlierReport:
    """Global outliers: |z| >= 3.0 against population moments, plus points
    outside the 1.5*IQR fences (quartiles by linear interpolation).

    A zero-spread series flags nothing: z-scores are defined as 0 and the
    IQR fences collapse onto the constant.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < 4:
        raise TooShort("detect_outliers needs at least 4 points")
    mean = float(arr.mean())
    std = float(arr.std())
    if std < 1e-300:
        z = np.zeros_like(arr)
    else:
        z = (arr - mean) / std
    z_idx = tuple(
        (int(i), float(z[i])) for i in np.flatnonzero(np.abs(z) >= Z_THRESHOLD)
    )
    q1, q3 = np.percentile(arr, [25, 75])
    iqr = q3 - q1
    lo = float(q1 - IQR_FACTOR * iqr)
    hi = float(q3 + IQR_FACTOR * iqr)
    iqr_idx = tuple(int(i) for i in np.flatnonzero((arr < lo) | (arr > hi)))
    return OutlierReport(
        z_indices=z_idx,
        iqr_indices=iqr_idx,
        z_threshold=Z_THRESHOLD,
        iqr_multiplier=IQR_FACTOR,
        lower_fence=lo,
        upper_fence=hi,
    )


def _rolling_mean_std(arr: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    # centered window [i - w//2, i - w//2 + w), truncated at the edges;
    # computed on globally centered values to keep the cumsum trick stable
    n = arr.size
    shift = arr.mean()
    centered = arr - shift
    idx = np.arange(n)
    lo = np.maximum(0, idx - w // 2)
    hi = np.minimum(n, idx - w // 2 + w)
    cs = np.concatenate(([0.0], np.cumsum(centered)))
    cs2 = np.concatenate(([0.0], np.cumsum(centered * centered)))
    cnt = (hi - lo).astype(np.float64)
    s1 = cs[hi] - cs[lo]
    s2 = cs2[hi] - cs2[lo]
    means = s1 / cnt
    var = np.maximum(0.0, s2 / cnt - means**2)
    return means + shift, np.sqrt(var)


def rolling_statistics(x, scales=DEFAULT_SCALES) -> RollingReport:
    """Multi-scale rolling mean/std with contextual-outlier candidates.

    A point is a candidate when its local |z| reaches 2.5 at any scale; the
    reported strength is the maximum local |z| across scales.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < min(scales):
        raise TooShort(f"rolling_statistics needs at least {min(scales)} points")
    per_scale = {}
    best = np.zeros(arr.size)
    for w in scales:
        if w > arr.size:
            continue
        means, stds = _rolling_mean_std(arr, w)
        per_scale[w] = (means, stds)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(stds > 1e-300, np.abs(arr - means) / stds, 0.0)
        best = np.maximum(best, z)
    cand = tuple(
        (int(i), float(best[i])) for i in np.flatnonzero(best >= LOCAL_Z_THRESHOLD)
    )
    return RollingReport(scales=per_scale, candidates=cand)


def difference(x, order: int = 1) -> np.ndarray:
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    arr = np.asarray(x, dtype=np.float64)
    if arr.size <= order:
        raise TooShort(f"difference of order {order} needs more than {order} points")
    return np.diff(arr, n=order)
