"""Token-budgeted text compression of a window for prompt embedding.

The summary keeps exact global statistics and four equal-segment statistics,
then samples "idx:value" pairs at the smallest stride whose rendering fits
the token budget. The global argmin and argmax are always sampled. Sampled
values are rounded to integers (half away from zero); statistics are printed
with 4 significant digits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def estimate_tokens(text: str) -> int:
    """ceil(len/4): the crude 4-characters-per-token heuristic."""
    return math.ceil(len(text) / 4)


def _round_half_away(v: float) -> int:
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


@dataclass(frozen=True)
class CompressedSummary:
    n: int
    minimum: float
    maximum: float
    mean: float
    std: float
    segment_stats: tuple[tuple[int, int, float, float], ...]  # (start, end, mean, std)
    sampled: tuple[tuple[int, int], ...]  # (index, rounded value)
    stride: int
    text: str
    estimated_tokens: int


def _render(
    n: int,
    minimum: float,
    maximum: float,
    mean: float,
    std: float,
    segs: tuple[tuple[int, int, float, float], ...],
    sampled: tuple[tuple[int, int], ...],
    stride: int,
) -> str:
    lines = [
        f"n={n} min={_fmt(minimum)} max={_fmt(maximum)} "
        f"mean={_fmt(mean)} std={_fmt(std)}"
    ]
    for start, end, m, s in segs:
        lines.append(f"seg[{start}:{end}] mean={_fmt(m)} std={_fmt(s)}")
    pairs = " ".join(f"{i}:{v}" for i, v in sampled)
    lines.append(f"pts stride={stride}: {pairs}")
    return "\n".join(lines)


def summarize(values: np.ndarray, token_budget: int) -> CompressedSummary:
    """Compress a window into a budgeted text summary.

    The sampling stride is the smallest one whose rendered text fits the
    budget, so a larger budget never produces a sparser sampling. Budgets
    below roughly 60 tokens cannot fit the fixed header and are best-effort.
    """
    if token_budget < 50:
        raise ValueError("token_budget must be at least 50")
    arr = np.asarray(values, dtype=np.float64)
    n = int(arr.shape[0])
    if n == 0:
        raise ValueError("cannot summarize an empty window")

    minimum = float(arr.min())
    maximum = float(arr.max())
    mean = float(arr.mean())
    std = float(arr.std())
    argmin = int(arr.argmin())
    argmax = int(arr.argmax())

    bounds = [n * k // 4 for k in range(5)]
    segs = []
    for k in range(4):
        lo, hi = bounds[k], bounds[k + 1]
        if hi > lo:
            seg = arr[lo:hi]
            segs.append((lo, hi, float(seg.mean()), float(seg.std())))
    segs = tuple(segs)

    def sampled_at(stride: int) -> tuple[tuple[int, int], ...]:
        idx = sorted(set(range(0, n, stride)) | {argmin, argmax})
        return tuple((i, _round_half_away(float(arr[i]))) for i in idx)

    chosen = None
    for stride in range(1, n + 1):
        sampled = sampled_at(stride)
        text = _render(n, minimum, maximum, mean, std, segs, sampled, stride)
        if estimate_tokens(text) <= token_budget:
            chosen = (stride, sampled, text)
            break
        # strides beyond n/2 all degenerate to {0, extrema}; stop early
        if stride > 1 and len(sampled) <= 3:
            break
    if chosen is None:
        stride = n
        sampled = sampled_at(stride)
        text = _render(n, minimum, maximum, mean, std, segs, sampled, stride)
        chosen = (stride, sampled, text)

    stride, sampled, text = chosen
    return CompressedSummary(
        n=n,
        minimum=minimum,
        maximum=maximum,
        mean=mean,
        std=std,
        segment_stats=segs,
        sampled=sampled,
        stride=stride,
        text=text,
        estimated_tokens=estimate_tokens(text),
    )
