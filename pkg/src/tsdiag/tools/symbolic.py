"""Symbolic tools: SAX discretization and recurrence quantification."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ..errors import TooShort

SAX_BREAK_RANKS = 3
RECURRENCE_PERCENTILE = 0.1
RECURRENCE_MAX_LEN = 1000
MIN_LINE = 2


@dataclass(frozen=True)
class SaxReport:
    symbols: str
    breakpoints: tuple[float, ...]  # Gaussian breakpoints for the alphabet
    segment_bounds: tuple[tuple[int, int], ...]  # [start, end) per segment
    break_positions: tuple[int, ...]  # series index starting a >=3-rank jump


@dataclass(frozen=True)
class RecurrenceReport:
    recurrence_rate: float
    determinism: float
    laminarity: float
    threshold: float
    matrix: np.ndarray  # binary, diagonal included


def _paa_bounds(n: int, segments: int) -> tuple[tuple[int, int], ...]:
    # remainder spread over the leading pieces
    base, rem = divmod(n, segments)
    bounds = []
    start = 0
    for s in range(segments):
        size = base + (1 if s < rem else 0)
        bounds.append((start, start + size))
        start += size
    return tuple(bounds)


def sax(x, segments: int, alphabet: int = 10) -> SaxReport:
    """Z-normalized piecewise-aggregate SAX with Gaussian breakpoints.

    A constant series maps every segment to the middle symbol. Break
    positions are the series indices where a segment's symbol jumps by at
    least 3 alphabet ranks from its predecessor.
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if segments < 1 or segments > n:
        raise TooShort("segments must be between 1 and the series length")
    if not 2 <= alphabet <= 26:
        raise ValueError("alphabet size must be in [2, 26]")
    breakpoints = tuple(
        float(sps.norm.ppf(k / alphabet)) for k in range(1, alphabet)
    )
    std = arr.std()
    bounds = _paa_bounds(n, segments)
    if std < 1e-300:
        ranks = [alphabet // 2] * segments
    else:
        z = (arr - arr.mean()) / std
        means = np.array([z[lo:hi].mean() for lo, hi in bounds])
        ranks = list(np.searchsorted(breakpoints, means, side="right"))
    symbols = "".join(chr(ord("a") + int(r)) for r in ranks)
    breaks = tuple(
        bounds[s][0]
        for s in range(1, segments)
        if abs(ranks[s] - ranks[s - 1]) >= SAX_BREAK_RANKS
    )
    return SaxReport(
        symbols=symbols,
        breakpoints=breakpoints,
        segment_bounds=bounds,
        break_positions=breaks,
    )


def _neighbor_covered(rec: np.ndarray, di: int, dj: int) -> np.ndarray:
    # rec point (i, j) lies on a line of length >= 2 along (di, dj) iff one of
    # its two neighbors in that direction is also recurrent
    n = rec.shape[0]
    shifted = np.zeros_like(rec)
    src = rec[max(di, 0) : n + min(di, 0), max(dj, 0) : n + min(dj, 0)]
    shifted[max(-di, 0) : n + min(-di, 0), max(-dj, 0) : n + min(-dj, 0)] = src
    back = np.zeros_like(rec)
    src2 = rec[max(-di, 0) : n + min(-di, 0), max(-dj, 0) : n + min(-dj, 0)]
    back[max(di, 0) : n + min(di, 0), max(dj, 0) : n + min(dj, 0)] = src2
    return rec & (shifted | back)


def recurrence(x, percentile: float = RECURRENCE_PERCENTILE) -> RecurrenceReport:
    """Recurrence matrix with determinism and laminarity summaries.

    Distances are absolute value differences; the threshold is the given
    quantile of the off-diagonal distances. Determinism is the fraction of
    off-diagonal recurrent points lying on lines of length >= 2 parallel to
    either diagonal of the plot: with raw 1-dimensional states, same-phase
    recurrences run along the main diagonal and mirror-phase recurrences
    along the anti-diagonal, and both are deterministic structure.
    Laminarity is the analogous fraction for vertical lines. Series longer
    than 1000 points are block-averaged down first.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < 10:
        raise TooShort("recurrence needs at least 10 points")
    if arr.size > RECURRENCE_MAX_LEN:
        factor = -(-arr.size // RECURRENCE_MAX_LEN)
        pad = (-arr.size) % factor
        padded = np.concatenate([arr, np.full(pad, arr[-1])])
        arr = padded.reshape(-1, factor).mean(axis=1)
    n = arr.size

    dist = np.abs(arr[:, None] - arr[None, :])
    off_diag = ~np.eye(n, dtype=bool)
    threshold = float(np.quantile(dist[off_diag], percentile))
    rec = dist <= threshold
    rate = float(rec[off_diag].mean())

    rec_off = int(rec[off_diag].sum())
    if rec_off:
        diag_cov = _neighbor_covered(rec, 1, 1)
        anti_cov = _neighbor_covered(rec, 1, -1)
        det = float(((diag_cov | anti_cov) & off_diag).sum() / rec_off)
        vert_cov = _neighbor_covered(rec, 1, 0)
        lam = float((vert_cov & off_diag).sum() / rec_off)
    else:
        det = lam = 0.0
    return RecurrenceReport(
        recurrence_rate=rate,
        determinism=det,
        laminarity=lam,
        threshold=threshold,
        matrix=rec.astype(np.uint8),
    )
