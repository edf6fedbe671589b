"""Spectral tools: FFT spectrum, split-half ACF, STFT, Haar wavelet energies."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import TooShort

DOMINANCE_FACTOR = 3.0
ACF_PEAK_MIN = 0.2
PERIOD_CHANGE_REL = 0.2
STFT_WINDOW = 64
STFT_HOP = 32
WAVELET_MAX_LEVELS = 6

# minimum fraction of non-DC power in the peak bin for a period that
# downstream consumers may act on (the 3x-median rule alone is too loose:
# white noise passes it)
PEAK_SHARE_MIN = 0.2
MIN_USABLE_PERIOD = 4


@dataclass(frozen=True)
class SpectrumReport:
    dominant_period: float | None
    top_frequencies: tuple[tuple[float, float], ...]  # (frequency, power), desc power
    spectral_entropy: float
    peak_share: float  # peak-bin power / total non-DC power


@dataclass(frozen=True)
class AcfReport:
    acf_first_half: np.ndarray
    acf_second_half: np.ndarray
    dominant_period_first: int | None
    dominant_period_second: int | None
    period_changed: bool


@dataclass(frozen=True)
class StftReport:
    magnitudes: np.ndarray  # frames x bins
    frame_offsets: tuple[int, ...]
    dominant_bins: tuple[int, ...]  # per-frame argmax bin, DC excluded
    dominant_freqs: tuple[float, ...]  # cycles per sample
    window: int = STFT_WINDOW
    hop: int = STFT_HOP


@dataclass(frozen=True)
class WaveletReport:
    levels: int
    detail_energies: tuple[float, ...]  # level 1 (finest) first
    approx_energy: float
    first_half_energies: tuple[float, ...]  # per level, split at the series midpoint
    second_half_energies: tuple[float, ...]
    total_energy: float


def fft_spectrum(x) -> SpectrumReport:
    """Mean-removed real FFT power spectrum.

    The dominant period is reported when the peak bin carries at least 3x the
    median positive bin power; the peak share field lets callers apply a
    stricter gate (see usable_period).
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < 8:
        raise TooShort("fft_spectrum needs at least 8 points")
    spec = np.fft.rfft(arr - arr.mean())
    power = np.abs(spec) ** 2
    power = power[1:]  # DC bin is ~0 after mean removal
    total = float(power.sum())
    if total < 1e-300:
        return SpectrumReport(
            dominant_period=None,
            top_frequencies=(),
            spectral_entropy=0.0,
            peak_share=0.0,
        )

    freqs = np.arange(1, power.size + 1) / n
    order = np.argsort(-power, kind="stable")
    top = tuple((float(freqs[i]), float(power[i])) for i in order[:5])

    peak_bin = int(order[0])
    positive = power[power > 0]
    med = float(np.median(positive))
    dominant = None
    if power[peak_bin] >= DOMINANCE_FACTOR * med:
        dominant = float(round(n / (peak_bin + 1)))

    p = power / total
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    return SpectrumReport(
        dominant_period=dominant,
        top_frequencies=top,
        spectral_entropy=entropy,
        peak_share=float(power[peak_bin] / total),
    )


def usable_period(report: SpectrumReport, n: int) -> int | None:
    """Period a consumer may act on: dominant, concentrated, and resolvable.

    Requires the 3x-median dominance to have fired, at least PEAK_SHARE_MIN of
    the non-DC power in the peak bin, and a period between 4 and n // 2.
    """
    if report.dominant_period is None:
        return None
    if report.peak_share < PEAK_SHARE_MIN:
        return None
    period = int(round(report.dominant_period))
    if period < MIN_USABLE_PERIOD or period > n // 2:
        return None
    return period


def estimate_period(x) -> int | None:
    """Actionable cycle length of a series, or None.

    Removes the least-squares line first (a strong ramp otherwise hides the
    cycle behind the lowest frequency bin), then applies the usable_period
    gate to the spectrum of the detrended values.
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < 8:
        return None
    t = np.arange(n, dtype=np.float64)
    slope, intercept = np.polyfit(t, arr, 1)
    return usable_period(fft_spectrum(arr - (slope * t + intercept)), n)


def _biased_acf(arr: np.ndarray, max_lag: int) -> np.ndarray:
    n = arr.size
    centered = arr - arr.mean()
    denom = float((centered**2).sum())
    acf = np.zeros(max_lag + 1)
    if denom < 1e-300:
        return acf
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = float((centered[:-k] * centered[k:]).sum()) / denom
    return acf


def _first_acf_peak(acf: np.ndarray) -> int | None:
    # first local maximum above the threshold, beyond lag 1
    for k in range(2, acf.size - 1):
        if acf[k] >= ACF_PEAK_MIN and acf[k] >= acf[k - 1] and acf[k] >= acf[k + 1]:
            return k
    return None


def autocorrelation_split(x, max_lag: int = 100) -> AcfReport:
    """Biased ACF of each half plus a period-change flag.

    The dominant period of a half is the lag of the first local ACF maximum
    above 0.2 beyond lag 1. The flag fires when exactly one half has a period
    or the relative difference (against the smaller period) exceeds 20%.
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < 40:
        raise TooShort("autocorrelation_split needs at least 40 points")
    half = n // 2
    lag = max(2, min(max_lag, half // 2))
    first = _biased_acf(arr[:half], lag)
    second = _biased_acf(arr[half:], lag)
    p1 = _first_acf_peak(first)
    p2 = _first_acf_peak(second)
    if p1 is None and p2 is None:
        changed = False
    elif p1 is None or p2 is None:
        changed = True
    else:
        changed = abs(p1 - p2) / min(p1, p2) > PERIOD_CHANGE_REL
    return AcfReport(
        acf_first_half=first,
        acf_second_half=second,
        dominant_period_first=p1,
        dominant_period_second=p2,
        period_changed=changed,
    )


def stft(x) -> StftReport:
    """Hann-windowed short-time Fourier magnitudes, window 64, hop 32."""
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < STFT_WINDOW:
        raise TooShort(f"stft needs at least {STFT_WINDOW} points")
    window = np.hanning(STFT_WINDOW)
    n_frames = (n - STFT_WINDOW) // STFT_HOP + 1
    offsets = tuple(i * STFT_HOP for i in range(n_frames))
    mags = np.empty((n_frames, STFT_WINDOW // 2 + 1))
    for f, off in enumerate(offsets):
        frame = arr[off : off + STFT_WINDOW] * window
        mags[f] = np.abs(np.fft.rfft(frame))
    dom_bins = tuple(int(1 + np.argmax(mags[f, 1:])) for f in range(n_frames))
    dom_freqs = tuple(b / STFT_WINDOW for b in dom_bins)
    return StftReport(
        magnitudes=mags,
        frame_offsets=offsets,
        dominant_bins=dom_bins,
        dominant_freqs=dom_freqs,
    )


def wavelet_energy(x) -> WaveletReport:
    """Haar detail energies per level (finest first), zero-padded to a power
    of two; levels = floor(log2 n) capped at 6.

    The orthonormal Haar transform conserves energy: detail energies plus the
    final approximation energy equal the input energy. Per-level energies are
    also split by whether a coefficient's support starts before the series
    midpoint.
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < 8:
        raise TooShort("wavelet_energy needs at least 8 points")
    size = 1
    while size < n:
        size *= 2
    data = np.zeros(size)
    data[:n] = arr
    levels = min(WAVELET_MAX_LEVELS, int(math.floor(math.log2(n))))

    detail_energies: list[float] = []
    first_half: list[float] = []
    second_half: list[float] = []
    approx = data
    for level in range(1, levels + 1):
        pairs = approx.reshape(-1, 2)
        details = (pairs[:, 0] - pairs[:, 1]) / math.sqrt(2.0)
        approx = (pairs[:, 0] + pairs[:, 1]) / math.sqrt(2.0)
        sq = details**2
        detail_energies.append(float(sq.sum()))
        support_start = np.arange(details.size) * (2**level)
        in_first = support_start < n / 2
        first_half.append(float(sq[in_first].sum()))
        second_half.append(float(sq[~in_first].sum()))
    return WaveletReport(
        levels=levels,
        detail_energies=tuple(detail_energies),
        approx_energy=float((approx**2).sum()),
        first_half_energies=tuple(first_half),
        second_half_energies=tuple(second_half),
        total_energy=float((arr**2).sum()),
    )
