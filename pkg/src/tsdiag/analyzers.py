"""Four family analyzers emitting a shared evidence representation.

Each analyzer runs its tool set over one window and returns an
EvidenceBundle: typed candidate intervals with strengths plus rendered tool
summaries. Classification thresholds here are calibration constants, named
below and exercised by the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import AnomalyFamily, AnomalyType, Interval, merge_intervals
from .errors import ToolError
from .represent import CompressedSummary
from . import tools

ALPHA = 0.05
MEAN_SHIFT_MIN_SIGMA = 1.0
VAR_RATIO_BAND = (0.5, 2.0)
AMPLITUDE_RATIO_MIN = 1.8
PERIOD_SAME_REL = 0.2
DETERMINISM_DROP_RATIO = 0.7
STD_COLLAPSE_FACTOR = 0.5
STD_COLLAPSE_MIN_RUN = 20
STD_COLLAPSE_SCALE = 25
TREND_SLOPE_DELTA = 0.03  # trend-component slope change, sigma per step
TREND_SIDE_SPAN = 100
SPLIT_GRID = (-50, -25, 0, 25, 50)
MIN_SIDE = 20
CANDIDATE_MERGE_GAP = 2
SAX_SEGMENTS = 20


@dataclass(frozen=True)
class Candidate:
    interval: Interval
    types: frozenset
    strength: float
    note: str = ""

    def to_json(self) -> dict:
        return {
            "start": self.interval.start,
            "end": self.interval.end,
            "types": sorted(int(t) for t in self.types),
            "strength": round(float(self.strength), 4),
            "note": self.note,
        }


@dataclass(frozen=True)
class EvidenceBundle:
    family: AnomalyFamily
    candidates: tuple[Candidate, ...]
    tool_summaries: dict
    summary: str
    images: tuple = field(default=(), repr=False)

    def to_json(self) -> dict:
        return {
            "family": self.family.name,
            "candidates": [c.to_json() for c in self.candidates],
            "tool_summaries": dict(self.tool_summaries),
            "summary": self.summary,
            "image_count": len(self.images),
        }


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _merge_typed(indices, strengths, types, n, notes: str):
    """Merge per-point candidate indices (gap 2) into interval candidates."""
    if not indices:
        return []
    intervals = merge_intervals([Interval(i, i) for i in indices], gap=CANDIDATE_MERGE_GAP)
    by_index = dict(zip(indices, strengths))
    out = []
    for iv in intervals:
        members = [i for i in indices if iv.start <= i <= iv.end]
        strength = max(by_index[i] for i in members)
        out.append(Candidate(iv, frozenset(types), float(strength), notes))
    return out


def point_analyze(window, summary: CompressedSummary) -> EvidenceBundle:
    """Global outliers (Type 1) and context-only outliers (Type 2).

    Global candidates come from detect_outliers (z union IQR, strength |z|);
    contextual candidates are rolling_statistics hits not already global
    (strength = max local |z|). Adjacent indices merge with gap 2.
    """
    values = np.asarray(window.values, dtype=np.float64)
    stats = tools.statistics(values)
    outliers = tools.detect_outliers(values)
    tool_summaries = {
        "statistics": stats.describe(),
        "detect_outliers": (
            f"z>={outliers.z_threshold:g}: {[i for i, _ in outliers.z_indices]} "
            f"iqr: {list(outliers.iqr_indices)} "
            f"fences [{_fmt(outliers.lower_fence)}, {_fmt(outliers.upper_fence)}]"
        ),
    }
    sigma = stats.std
    z_all = {} if sigma < 1e-300 else {
        i: abs(values[i] - stats.mean) / sigma for i in range(values.size)
    }
    global_idx = sorted({i for i, _ in outliers.z_indices} | set(outliers.iqr_indices))
    global_strength = [z_all.get(i, 0.0) for i in global_idx]

    try:
        rolling = tools.rolling_statistics(values)
        contextual = [(i, s) for i, s in rolling.candidates if i not in set(global_idx)]
        tool_summaries["rolling_statistics"] = (
            f"scales {sorted(rolling.scales)} local-z hits: "
            f"{[(i, round(s, 2)) for i, s in rolling.candidates]}"
        )
    except ToolError as exc:
        contextual = []
        tool_summaries["rolling_statistics"] = f"unavailable: {exc}"

    candidates = _merge_typed(
        global_idx, global_strength, {AnomalyType.GLOBAL_POINT}, values.size,
        "global |z| or IQR outlier",
    )
    candidates += _merge_typed(
        [i for i, _ in contextual], [s for _, s in contextual],
        {AnomalyType.CONTEXTUAL_POINT}, values.size, "local-context outlier",
    )
    candidates.sort(key=lambda c: (c.interval.start, c.interval.end))
    n_flag = sum(c.interval.length() for c in candidates)
    return EvidenceBundle(
        family=AnomalyFamily.POINT,
        candidates=tuple(candidates),
        tool_summaries=tool_summaries,
        summary=f"{len(candidates)} point candidate(s) over {n_flag} flagged position(s)",
    )


def _trend_slopes(trend: np.ndarray, split: int, sigma: float):
    lo = max(0, split - TREND_SIDE_SPAN)
    hi = min(trend.size, split + TREND_SIDE_SPAN)
    left, right = trend[lo:split], trend[split:hi]
    if left.size < MIN_SIDE or right.size < MIN_SIDE or sigma < 1e-300:
        return None
    sl = float(np.polyfit(np.arange(left.size), left, 1)[0]) / sigma
    sr = float(np.polyfit(np.arange(right.size), right, 1)[0]) / sigma
    return sl, sr


def struct_analyze(window, summary: CompressedSummary) -> EvidenceBundle:
    """CUSUM change points classified into trend / mean / variance changes.

    Each alarm is expanded to its persistence interval (regime_expand) and
    classified at a small grid of splits around the alarm: Welch mean test
    (Type 6 at p < 0.05 and |shift| >= 1 sigma), F variance test (Type 7 at
    p < 0.05 and ratio outside [0.5, 2]), and a trend-component slope change
    (Type 5). Candidates with no qualifying type are dropped, which is what
    keeps stationary-noise windows quiet.
    """
    values = np.asarray(window.values, dtype=np.float64)
    n = values.size
    report = tools.change_points(values)
    sigma = float(values.std())
    trend_comp = None
    tool_summaries = {
        "change_points": f"{len(report.points)} alarm(s): "
        f"{[(p.index, p.direction) for p in report.points]}",
    }

    candidates = []
    comparisons = []
    for cp in report.points:
        try:
            interval = tools.regime_expand(values, cp.index)
        except ToolError:
            interval = Interval(cp.index, min(n - 1, cp.index + 50))
        types = set()
        strength = 0.0
        detail = []
        splits = sorted({
            min(max(cp.index + d, MIN_SIDE), n - MIN_SIDE) for d in SPLIT_GRID
        })
        for split in splits:
            if split < MIN_SIDE or n - split < MIN_SIDE:
                continue
            cmp = tools.compare_segments(values, split)
            comparisons.append((split, cmp))
            strength = max(strength, abs(cmp.mean_shift_sigma),
                           abs(np.log2(cmp.var_ratio)) if cmp.var_ratio > 0 else 0.0)
            if cmp.mean_diff_p < ALPHA and abs(cmp.mean_shift_sigma) >= MEAN_SHIFT_MIN_SIGMA:
                types.add(AnomalyType.MEAN_CHANGE_POINT)
                detail.append(f"mean shift {_fmt(cmp.mean_shift_sigma)}s @ {split}")
            if cmp.var_diff_p < ALPHA and not (
                VAR_RATIO_BAND[0] < cmp.var_ratio < VAR_RATIO_BAND[1]
            ):
                types.add(AnomalyType.VARIANCE_CHANGE)
                detail.append(f"var ratio {_fmt(cmp.var_ratio)} @ {split}")
            if trend_comp is None:
                trend_comp = tools.decompose(values)[0] if n >= 4 else np.zeros(n)
            slopes = _trend_slopes(trend_comp, split, sigma if sigma > 0 else 1.0)
            if slopes is not None:
                sl, sr = slopes
                if abs(sr - sl) > TREND_SLOPE_DELTA:
                    types.add(AnomalyType.TREND_CHANGE)
                    detail.append(f"trend slope {_fmt(sl)}->{_fmt(sr)} @ {split}")
        if types:
            candidates.append(Candidate(
                interval, frozenset(types), float(strength), "; ".join(detail),
            ))

    tool_summaries["compare_segments"] = " | ".join(
        f"@{s}: mean_p={_fmt(c.mean_diff_p)} shift={_fmt(c.mean_shift_sigma)}s "
        f"var_p={_fmt(c.var_diff_p)} ratio={_fmt(c.var_ratio)}"
        for s, c in comparisons[:6]
    ) or "no comparisons run"
    candidates.sort(key=lambda c: (c.interval.start, c.interval.end))
    return EvidenceBundle(
        family=AnomalyFamily.STRUCTURAL,
        candidates=tuple(candidates),
        tool_summaries=tool_summaries,
        summary=f"{len(report.points)} change alarm(s), "
                f"{len(candidates)} classified candidate(s)",
    )


def _half_amplitude(half: np.ndarray) -> float:
    t = np.arange(half.size, dtype=np.float64)
    slope, intercept = np.polyfit(t, half, 1)
    detrended = half - (slope * t + intercept)
    return float(np.sqrt(np.mean(detrended**2)))


def season_analyze(window, summary: CompressedSummary) -> EvidenceBundle:
    """Amplitude (Type 3) and periodicity (Type 4) disturbances between halves.

    Soft-fails to an empty candidate list when neither half carries a usable
    period. Amplitude is the RMS of each linearly detrended half; Type 3
    needs the ratio outside [1/1.8, 1.8] with the period unchanged. Type 4
    fires on the ACF period-change flag or an STFT dominant-bin shift.
    """
    values = np.asarray(window.values, dtype=np.float64)
    n = values.size
    half = n // 2
    spectrum = tools.fft_spectrum(values)
    acf = tools.autocorrelation_split(values)
    stft_rep = tools.stft(values)
    wavelet = tools.wavelet_energy(values)
    p1 = tools.estimate_period(values[:half])
    p2 = tools.estimate_period(values[half:])

    tool_summaries = {
        "fft_spectrum": (
            f"dominant={spectrum.dominant_period} share={_fmt(spectrum.peak_share)} "
            f"entropy={_fmt(spectrum.spectral_entropy)}"
        ),
        "autocorrelation_split": (
            f"periods {acf.dominant_period_first}/{acf.dominant_period_second} "
            f"changed={acf.period_changed}"
        ),
        "stft": f"dominant bins {stft_rep.dominant_bins}",
        "wavelet_energy": (
            f"details {[round(e, 3) for e in wavelet.detail_energies]} "
            f"halves {[round(e, 3) for e in wavelet.first_half_energies]}"
            f"/{[round(e, 3) for e in wavelet.second_half_energies]}"
        ),
    }

    if p1 is None and p2 is None and acf.dominant_period_first is None \
            and acf.dominant_period_second is None:
        return EvidenceBundle(
            family=AnomalyFamily.SEASONAL,
            candidates=(),
            tool_summaries=tool_summaries,
            summary="no seasonality detected in either half",
        )

    candidates = []
    second = Interval(half, n - 1)

    # amplitude change with stable period: compare detrended RMS of halves
    if p1 is not None and p2 is not None \
            and abs(p1 - p2) / min(p1, p2) <= PERIOD_SAME_REL:
        a1 = _half_amplitude(values[:half])
        a2 = _half_amplitude(values[half:])
        if a1 > 1e-300 and a2 > 1e-300:
            ratio = a2 / a1
            if ratio >= AMPLITUDE_RATIO_MIN or ratio <= 1.0 / AMPLITUDE_RATIO_MIN:
                candidates.append(Candidate(
                    second, frozenset({AnomalyType.AMPLITUDE_CHANGE}),
                    abs(float(np.log2(ratio))),
                    f"amplitude ratio {_fmt(ratio)} at stable period {p1}",
                ))

    # period change via split ACF
    if acf.period_changed:
        pa = acf.dominant_period_first
        pb = acf.dominant_period_second
        if pa and pb:
            strength = abs(float(np.log2(pb / pa)))
            note = f"acf period {pa} -> {pb}"
        else:
            strength = 1.0
            note = f"acf period {pa} -> {pb} (one half aperiodic)"
        candidates.append(Candidate(
            second, frozenset({AnomalyType.SEASONALITY_ANOMALY}), strength, note,
        ))
    else:
        # STFT dominant-bin shift: early-mode vs late-mode frames
        bins = stft_rep.dominant_bins
        if len(bins) >= 6:
            early = int(np.bincount(bins[:3]).argmax())
            late = int(np.bincount(bins[-3:]).argmax())
            if early != late and early > 0 and late > 0:
                switch = next(
                    (i for i, b in enumerate(bins) if b == late and i >= 3), len(bins) - 3
                )
                start = stft_rep.frame_offsets[switch]
                candidates.append(Candidate(
                    Interval(start, n - 1),
                    frozenset({AnomalyType.SEASONALITY_ANOMALY}),
                    abs(float(np.log2(late / early))),
                    f"stft dominant bin {early} -> {late} near frame {switch}",
                ))

    candidates.sort(key=lambda c: (c.interval.start, c.interval.end))
    return EvidenceBundle(
        family=AnomalyFamily.SEASONAL,
        candidates=tuple(candidates),
        tool_summaries=tool_summaries,
        summary=f"periods {p1}/{p2}, {len(candidates)} seasonal candidate(s)",
    )


PHASE_OFFSET_MIN_GAP = 0.5  # sigma units of profile discrepancy


def _phase_offset(values: np.ndarray, period: int):
    """Circular offset between the halves' mean waveforms over one period.

    Folds each half by the period (phases taken modulo the global index so an
    unshifted signal aligns at offset 0), centers both profiles, and returns
    (offset of the best circular alignment, peak profile discrepancy at
    offset 0 in window-sigma units). Returns None when the fold is degenerate.
    """
    n = values.size
    half = n // 2
    sigma = float(values.std())
    if period < 2 or half < 2 * period or sigma < 1e-300:
        return None
    phases = np.arange(n) % period
    prof1 = np.array([values[:half][phases[:half] == k].mean() for k in range(period)])
    prof2 = np.array([values[half:][phases[half:] == k].mean() for k in range(period)])
    prof1 -= prof1.mean()
    prof2 -= prof2.mean()
    if float(np.abs(prof1).max()) < 1e-300:
        return None
    scores = [float(np.dot(np.roll(prof1, c), prof2)) for c in range(period)]
    offset = int(np.argmax(scores))
    discrepancy = float(np.abs(prof1 - prof2).max()) / sigma
    if discrepancy < PHASE_OFFSET_MIN_GAP:
        return (0, discrepancy)
    return (offset, discrepancy)


def pattern_analyze(window, summary: CompressedSummary) -> EvidenceBundle:
    """Shape anomalies: circular shifts (Type 8) and flattened segments (Type 9).

    The pattern-shift signature needs the ACF period preserved across halves
    plus phase evidence: either a circular offset between the halves' folded
    waveforms or a SAX phase break. A rolling-std collapse below half the
    window median sustained for 20+ points marks a distorted (clipped or
    flattened) waveform (Type 9). A split-half recurrence determinism drop
    below 0.7 backs a generic shift candidate. GAF and MTF matrices are
    attached as images.
    """
    values = np.asarray(window.values, dtype=np.float64)
    n = values.size
    half = n // 2
    sax_rep = tools.sax(values, segments=min(SAX_SEGMENTS, n))
    acf = tools.autocorrelation_split(values)
    rec1 = tools.recurrence(values[:half])
    rec2 = tools.recurrence(values[half:])
    gaf_img = tools.gaf(values)
    mtf_img, _ = tools.mtf(values)

    det_ratio = rec2.determinism / rec1.determinism if rec1.determinism > 1e-300 else 1.0
    tool_summaries = {
        "sax": f"symbols {sax_rep.symbols} breaks {list(sax_rep.break_positions)}",
        "recurrence": (
            f"determinism {_fmt(rec1.determinism)} -> {_fmt(rec2.determinism)} "
            f"(ratio {_fmt(det_ratio)})"
        ),
        "autocorrelation_split": (
            f"periods {acf.dominant_period_first}/{acf.dominant_period_second} "
            f"changed={acf.period_changed}"
        ),
    }

    candidates = []
    ranks = [ord(c) - 97 for c in sax_rep.symbols]
    period_preserved = (
        acf.dominant_period_first is not None
        and acf.dominant_period_second is not None
        and not acf.period_changed
    )
    phase = _phase_offset(values, acf.dominant_period_first) if period_preserved else None
    if period_preserved and (sax_rep.break_positions or (phase and phase[0] != 0)):
        if phase and phase[0] != 0:
            offset, discrepancy = phase
            strength = discrepancy
            note = (f"phase offset {offset}/{acf.dominant_period_first} between "
                    f"halves, profile gap {_fmt(discrepancy)}s")
            start = half
        else:
            jumps = []
            for pos in sax_rep.break_positions:
                seg = next(
                    i for i, (lo, _) in enumerate(sax_rep.segment_bounds) if lo == pos
                )
                jumps.append(abs(ranks[seg] - ranks[seg - 1]))
            strength = float(max(jumps))
            note = f"sax break(s) at {list(sax_rep.break_positions)} with period preserved"
            start = sax_rep.break_positions[0]
        candidates.append(Candidate(
            Interval(start, n - 1), frozenset({AnomalyType.PATTERN_SHIFT}),
            strength, note,
        ))
    elif det_ratio < DETERMINISM_DROP_RATIO:
        candidates.append(Candidate(
            Interval(half, n - 1), frozenset({AnomalyType.PATTERN_SHIFT}),
            abs(float(np.log2(det_ratio))),
            f"recurrence determinism drop ratio {_fmt(det_ratio)}",
        ))

    try:
        rolling = tools.rolling_statistics(values, scales=(STD_COLLAPSE_SCALE,))
        rstd = rolling.scales[STD_COLLAPSE_SCALE][1]
        med = float(np.median(rstd))
        if med > 1e-300:
            mask = rstd < STD_COLLAPSE_FACTOR * med
            run_start = None
            for i in range(n + 1):
                active = i < n and mask[i]
                if active and run_start is None:
                    run_start = i
                elif not active and run_start is not None:
                    if i - run_start >= STD_COLLAPSE_MIN_RUN:
                        depth = float(np.min(rstd[run_start:i]))
                        candidates.append(Candidate(
                            Interval(run_start, i - 1),
                            frozenset({AnomalyType.WAVEFORM_DISTORTION}),
                            abs(float(np.log2(max(depth, 1e-12) / med))),
                            f"rolling std collapse to {_fmt(depth)} vs median {_fmt(med)}",
                        ))
                    run_start = None
        tool_summaries["rolling_std"] = f"median {_fmt(med)} at scale {STD_COLLAPSE_SCALE}"
    except ToolError as exc:
        tool_summaries["rolling_std"] = f"unavailable: {exc}"

    candidates.sort(key=lambda c: (c.interval.start, c.interval.end))
    return EvidenceBundle(
        family=AnomalyFamily.PATTERN,
        candidates=tuple(candidates),
        tool_summaries=tool_summaries,
        summary=f"{len(candidates)} pattern candidate(s)",
        images=(gaf_img, mtf_img),
    )


_ANALYZERS = (
    (AnomalyFamily.POINT, point_analyze, 4),
    (AnomalyFamily.STRUCTURAL, struct_analyze, 20),
    (AnomalyFamily.SEASONAL, season_analyze, 64),
    (AnomalyFamily.PATTERN, pattern_analyze, 40),
)


def run_all(window, summary: CompressedSummary) -> list:
    """All four analyzers in fixed family order (Point, Structural, Seasonal,
    Pattern); an analyzer that cannot run yields an empty bundle carrying the
    failure note instead of aborting the batch."""
    bundles = []
    n = len(window.values)
    for family, fn, min_len in _ANALYZERS:
        if n < min_len:
            bundles.append(EvidenceBundle(
                family=family, candidates=(), tool_summaries={},
                summary=f"not run: window of {n} points is below the "
                        f"{min_len}-point minimum",
            ))
            continue
        try:
            bundles.append(fn(window, summary))
        except ToolError as exc:
            bundles.append(EvidenceBundle(
                family=family, candidates=(), tool_summaries={},
                summary=f"not run: {exc}",
            ))
    return bundles
