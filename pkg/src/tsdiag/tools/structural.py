"""Structural tools: decomposition, CUSUM change points, segment comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ..errors import PeriodTooLarge, PrefixTooShort, SegmentTooShort, TooShort
from .spectral import estimate_period

CUSUM_DRIFT = 0.5
CUSUM_THRESHOLD = 5.0
CUSUM_BURN_IN = 10

REGIME_REF_LEN = 100
REGIME_CHUNK = 50
REGIME_ALPHA = 0.05
REGIME_MIN_PREFIX = 20

# effect-size cap used instead of infinities when one side is constant
RATIO_CAP = 1e12


@dataclass(frozen=True)
class ChangePoint:
    index: int
    direction: str  # "up" | "down"
    statistic: float


@dataclass(frozen=True)
class ChangePointReport:
    points: tuple[ChangePoint, ...]  # sorted by index
    threshold_sigma: float = CUSUM_THRESHOLD
    drift_sigma: float = CUSUM_DRIFT


@dataclass(frozen=True)
class SegmentComparison:
    mean_diff_p: float
    var_diff_p: float
    mean_shift_sigma: float  # (right mean - left mean) / pooled std
    var_ratio: float  # right sample variance / left sample variance


def _centered_mean(arr: np.ndarray, w: int) -> np.ndarray:
    n = arr.size
    idx = np.arange(n)
    lo = np.maximum(0, idx - w // 2)
    hi = np.minimum(n, idx - w // 2 + w)
    cs = np.concatenate(([0.0], np.cumsum(arr)))
    return (cs[hi] - cs[lo]) / (hi - lo)


def decompose(x, period: int | None = None):
    """Classical additive decomposition: (trend, seasonal, residual).

    Trend is a centered moving average over the period (widened to odd so the
    window is symmetric); seasonal is the mean-centered per-phase average of
    the detrended series; the residual makes the reconstruction exact.

    With ``period=None`` the period is auto-detected from the FFT spectrum;
    when no usable period is found the seasonal part is zero and the trend is
    a moving average of window max(3, n // 10).
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < 4:
        raise TooShort("decompose needs at least 4 points")
    if period is not None:
        if period < 2:
            raise ValueError("period must be at least 2")
        if n < 2 * period:
            raise PeriodTooLarge(f"period {period} needs at least {2 * period} points")
    else:
        period = estimate_period(arr)

    if period is None:
        trend = _centered_mean(arr, max(3, n // 10))
        seasonal = np.zeros(n)
        return trend, seasonal, arr - trend - seasonal

    # centered moving average over one full period (half weights at the ends
    # when the period is even); held constant where the window runs off an end
    if period % 2 == 0:
        weights = np.ones(period + 1)
        weights[0] = weights[-1] = 0.5
        weights /= period
    else:
        weights = np.ones(period) / period
    core = np.convolve(arr, weights, mode="valid")
    lead = weights.size // 2
    trend = np.concatenate(
        [np.full(lead, core[0]), core, np.full(n - lead - core.size, core[-1])]
    )
    detrended = arr - trend
    phase_mean = np.zeros(period)
    for p in range(period):
        phase_mean[p] = detrended[p::period].mean()
    phase_mean -= phase_mean.mean()
    seasonal = phase_mean[np.arange(n) % period]
    residual = arr - trend - seasonal
    return trend, seasonal, residual


def change_points(x) -> ChangePointReport:
    """Two-sided CUSUM on the standardized series (drift 0.5, threshold 5.0,
    both in units of the global sigma).

    The reference level is the running mean of the standardized values since
    the last alarm (with a short burn-in), so level shifts are measured
    against the current regime. Each alarm reports the start of the excursion
    that crossed the threshold, the shift direction, and the statistic at the
    alarm; both sides reset after an alarm.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < 20:
        raise TooShort("change_points needs at least 20 points")
    sigma = arr.std()
    if sigma < 1e-300:
        return ChangePointReport(points=())
    z = (arr - arr.mean()) / sigma

    points: list[ChangePoint] = []
    s_pos = s_neg = 0.0
    pos_start: int | None = None
    neg_start: int | None = None
    ref_sum, ref_cnt = 0.0, 0
    for i in range(z.size):
        v = float(z[i])
        if ref_cnt >= CUSUM_BURN_IN:
            u = v - ref_sum / ref_cnt
            s_pos = max(0.0, s_pos + u - CUSUM_DRIFT)
            s_neg = max(0.0, s_neg - u - CUSUM_DRIFT)
            if s_pos > 0 and pos_start is None:
                pos_start = i
            if s_pos == 0:
                pos_start = None
            if s_neg > 0 and neg_start is None:
                neg_start = i
            if s_neg == 0:
                neg_start = None
            if s_pos > CUSUM_THRESHOLD or s_neg > CUSUM_THRESHOLD:
                if s_pos > CUSUM_THRESHOLD:
                    points.append(ChangePoint(int(pos_start), "up", float(s_pos)))
                else:
                    points.append(ChangePoint(int(neg_start), "down", float(s_neg)))
                s_pos = s_neg = 0.0
                pos_start = neg_start = None
                ref_sum, ref_cnt = 0.0, 0
                continue
        ref_sum += v
        ref_cnt += 1
    return ChangePointReport(points=tuple(points))


def compare_samples(left, right) -> SegmentComparison:
    """Welch t-test for means, two-sided F-test for variances, effect sizes."""
    a = np.asarray(left, dtype=np.float64)
    b = np.asarray(right, dtype=np.float64)
    if a.size < 5 or b.size < 5:
        raise SegmentTooShort("both segments need at least 5 points")
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    mean_delta = float(b.mean() - a.mean())

    if va < 1e-300 and vb < 1e-300:
        same = abs(mean_delta) < 1e-300
        return SegmentComparison(
            mean_diff_p=1.0 if same else 0.0,
            var_diff_p=1.0,
            mean_shift_sigma=0.0 if same else math.copysign(RATIO_CAP, mean_delta),
            var_ratio=1.0,
        )

    t_res = sps.ttest_ind(a, b, equal_var=False)
    mean_p = float(t_res.pvalue)
    if math.isnan(mean_p):
        mean_p = 1.0

    if va < 1e-300:
        var_p, ratio = 0.0, RATIO_CAP
    elif vb < 1e-300:
        var_p, ratio = 0.0, 0.0
    else:
        ratio = vb / va
        cdf = sps.f.cdf(ratio, b.size - 1, a.size - 1)
        var_p = float(2 * min(cdf, 1 - cdf))

    pooled = math.sqrt(((a.size - 1) * va + (b.size - 1) * vb) / (a.size + b.size - 2))
    if pooled < 1e-300:
        shift = 0.0 if abs(mean_delta) < 1e-300 else math.copysign(RATIO_CAP, mean_delta)
    else:
        shift = mean_delta / pooled
    return SegmentComparison(
        mean_diff_p=mean_p,
        var_diff_p=var_p,
        mean_shift_sigma=float(shift),
        var_ratio=float(ratio),
    )


def compare_segments(x, split: int) -> SegmentComparison:
    arr = np.asarray(x, dtype=np.float64)
    if split < 5 or arr.size - split < 5:
        raise SegmentTooShort("both sides of the split need at least 5 points")
    return compare_samples(arr[:split], arr[split:])


def regime_expand(x, change_index: int):
    """Expand a change index into the interval over which the regime differs.

    A reference window of up to 100 points before the change is compared
    against consecutive 50-point chunks after it (mean or variance test at
    p < 0.05); the interval runs to the end of the last differing chunk.
    """
    from ..core import Interval

    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if change_index < REGIME_MIN_PREFIX:
        raise PrefixTooShort(
            f"need at least {REGIME_MIN_PREFIX} points before index {change_index}"
        )
    ref = arr[max(0, change_index - REGIME_REF_LEN) : change_index]

    # chunk bounds; a tail shorter than 5 points rides with the previous chunk
    bounds = list(range(change_index, n, REGIME_CHUNK)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < 5:
        bounds.pop(-2)

    end = change_index
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo < 5:
            break
        cmp = compare_samples(ref, arr[lo:hi])
        if cmp.mean_diff_p < REGIME_ALPHA or cmp.var_diff_p < REGIME_ALPHA:
            end = hi - 1
        else:
            break
    return Interval(int(change_index), int(end))
