"""Image-form views: Gramian angular field, Markov transition field, charts."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from ..errors import TooShort

GAF_MAX_LEN = 400
MTF_BINS = 10


@dataclass(frozen=True)
class ImageMatrix:
    kind: str  # "GAF" | "MTF" | "Recurrence" | "LineChart"
    data: np.ndarray
    rendered: bytes | None = field(default=None, repr=False)

    def render_png(self) -> bytes:
        """8-bit grayscale PNG of the matrix, linear min-max scaled."""
        if self.rendered is not None:
            return self.rendered
        from PIL import Image

        arr = np.asarray(self.data, dtype=np.float64)
        lo, hi = float(arr.min()), float(arr.max())
        if hi - lo < 1e-300:
            scaled = np.zeros_like(arr, dtype=np.uint8)
        else:
            scaled = np.round((arr - lo) / (hi - lo) * 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(scaled, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"kind": self.kind, "data": np.asarray(self.data).tolist()}


def _block_average(arr: np.ndarray, max_len: int) -> np.ndarray:
    if arr.size <= max_len:
        return arr
    factor = -(-arr.size // max_len)
    pad = (-arr.size) % factor
    padded = np.concatenate([arr, np.full(pad, arr[-1])])
    return padded.reshape(-1, factor).mean(axis=1)


def gaf(x) -> ImageMatrix:
    """Gramian angular summation field on values rescaled to [-1, 1].

    A constant series rescales to 0 everywhere (angle pi/2), which forces
    every entry to cos(pi) = -1.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size < 4:
        raise TooShort("gaf needs at least 4 points")
    arr = _block_average(arr, GAF_MAX_LEN)
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo < 1e-300:
        scaled = np.zeros_like(arr)
    else:
        scaled = 2.0 * (arr - lo) / (hi - lo) - 1.0
    scaled = np.clip(scaled, -1.0, 1.0)
    sin_phi = np.sqrt(1.0 - scaled**2)
    # cos(phi_i + phi_j) expanded so the matrix is an exact outer-product sum
    matrix = np.outer(scaled, scaled) - np.outer(sin_phi, sin_phi)
    return ImageMatrix(kind="GAF", data=matrix)


def mtf(x, bins: int = MTF_BINS) -> tuple[ImageMatrix, np.ndarray]:
    """Markov transition field over quantile bins.

    Returns the field W (W[i, j] = transition probability from bin(x_i) to
    bin(x_j)) and the row-normalized first-order transition matrix itself.
    """
    arr = np.asarray(x, dtype=np.float64)
    n = arr.size
    if n < bins:
        raise TooShort("mtf needs at least as many points as bins")
    edges = np.quantile(arr, [k / bins for k in range(1, bins)])
    assignment = np.searchsorted(edges, arr, side="right")

    transitions = np.zeros((bins, bins))
    for a, b in zip(assignment[:-1], assignment[1:]):
        transitions[a, b] += 1
    row_sums = transitions.sum(axis=1, keepdims=True)
    occupied = row_sums[:, 0] > 0
    transitions[occupied] /= row_sums[occupied]

    fld = transitions[assignment[:, None], assignment[None, :]]
    return ImageMatrix(kind="MTF", data=fld), transitions


def line_chart(values, labels=None, title: str | None = None) -> ImageMatrix:
    """Line chart of the series rendered to PNG bytes (labels shaded red)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    arr = np.asarray(values, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(8, 3), dpi=100)
    ax.plot(np.arange(arr.size), arr, linewidth=0.8, color="tab:blue")
    if labels is not None:
        lab = np.asarray(labels)
        for lo, hi in _runs(lab):
            ax.axvspan(lo, hi, color="tab:red", alpha=0.25)
    if title:
        ax.set_title(title)
    ax.set_xlabel("index")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png")
    plt.close(fig)
    return ImageMatrix(kind="LineChart", data=arr.reshape(1, -1), rendered=buf.getvalue())


def _runs(labels: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(labels != 0)
    if idx.size == 0:
        return []
    runs = []
    start = prev = int(idx[0])
    for i in idx[1:]:
        if i == prev + 1:
            prev = int(i)
        else:
            runs.append((start, prev))
            start = prev = int(i)
    runs.append((start, prev))
    return runs
