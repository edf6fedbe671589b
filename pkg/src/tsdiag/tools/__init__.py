"""Deterministic analysis tools shared by the analyzers and the ICL builder."""
from .stats import (
    OutlierReport,
    RollingReport,
    StatsSummary,
    detect_outliers,
    difference,
    rolling_statistics,
    statistics,
)
from .structural import (
    ChangePoint,
    ChangePointReport,
    SegmentComparison,
    change_points,
    compare_samples,
    compare_segments,
    decompose,
    regime_expand,
)
from .spectral import (
    AcfReport,
    SpectrumReport,
    StftReport,
    WaveletReport,
    autocorrelation_split,
    estimate_period,
    fft_spectrum,
    stft,
    usable_period,
    wavelet_energy,
)
from .symbolic import RecurrenceReport, SaxReport, recurrence, sax
from .images import ImageMatrix, gaf, line_chart, mtf

__all__ = [
    "AcfReport",
    "ChangePoint",
    "ChangePointReport",
    "ImageMatrix",
    "OutlierReport",
    "RecurrenceReport",
    "RollingReport",
    "SaxReport",
    "SegmentComparison",
    "SpectrumReport",
    "StatsSummary",
    "StftReport",
    "WaveletReport",
    "autocorrelation_split",
    "change_points",
    "compare_samples",
    "compare_segments",
    "decompose",
    "detect_outliers",
    "difference",
    "estimate_period",
    "fft_spectrum",
    "gaf",
    "line_chart",
    "mtf",
    "recurrence",
    "regime_expand",
    "rolling_statistics",
    "sax",
    "statistics",
    "stft",
    "usable_period",
    "wavelet_energy",
]
