"""Road-mark extraction by intensity thresholding, plus map-quality metrics.

Painted markings are brighter than asphalt, so a global threshold on the
reconstructed map separates them.  Extraction quality is scored cell-wise
against a truth mask with completeness (recall), correctness (precision) and
their harmonic mean; RMSE and PSNR cover plain intensity fidelity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import CellMap, GridSpec

METHODS = ("otsu", "fixed")


@dataclass(frozen=True)
class MarkMask:
    """Marked-cell grid; only occupied cells can be marked."""

    spec: GridSpec
    marked: np.ndarray = field(repr=False)
    occupied: np.ndarray = field(repr=False)
    threshold: float | None = None

    def __post_init__(self):
        marked = np.asarray(self.marked, dtype=bool)
        occupied = np.asarray(self.occupied, dtype=bool)
        if marked.shape != self.spec.shape or occupied.shape != self.spec.shape:
            raise ValueError("mask shape does not match the grid")
        if (marked & ~occupied).any():
            raise ValueError("marked cells must be occupied")
        object.__setattr__(self, "marked", marked)
        object.__setattr__(self, "occupied", occupied)

    @property
    def n_marked(self) -> int:
        return int(self.marked.sum())


@dataclass(frozen=True)
class SegmentationReport:
    """Cell-level extraction scores with the underlying counts."""

    completeness: float
    correctness: float
    f_score: float
    tp: int
    fp: int
    fn: int


def otsu_threshold(cell_map: CellMap) -> float:
    """Between-class-variance-maximizing threshold over 256 intensity levels.

    Occupied values are quantized to unit-width bins; the returned threshold
    T splits classes as value < T versus value >= T.  Ties resolve to the
    lowest T.  A map whose occupied values all share one bin has no
    separable classes and raises.
    """
    occ = cell_map.occupied
    n = int(occ.sum())
    if n < 2:
        raise ValueError(f"need at least 2 occupied cells, got {n}")
    levels = np.clip(np.floor(cell_map.values[occ]), 0, 255).astype(np.intp)
    counts = np.bincount(levels, minlength=256).astype(np.float64)

    idx = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(counts)[:-1]          # class sizes for T = 1 .. 255
    w1 = n - w0
    moment0 = np.cumsum(counts * idx)[:-1]
    total_moment = float((counts * idx).sum())

    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.divide(moment0, w0, out=np.zeros(255), where=valid)
    mu1 = np.divide(total_moment - moment0, w1, out=np.zeros(255), where=valid)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, 0.0)

    best = int(np.argmax(between))
    if between[best] == 0.0:
        raise ValueError("all occupied values fall in one intensity bin; no threshold exists")
    return float(best + 1)


def extract_markings(
    cell_map: CellMap, method: str = "otsu", threshold: float | None = None
) -> MarkMask:
    """Threshold the map into a marking mask.

    ``otsu`` picks the threshold automatically from the occupied-value
    histogram; ``fixed`` uses the given ``threshold``.  Cells with value at
    or above the threshold are marked.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose one of {', '.join(METHODS)}")
    if method == "fixed":
        if threshold is None:
            raise ValueError("fixed method requires a threshold")
        t = float(threshold)
    else:
        t = otsu_threshold(cell_map)
    marked = cell_map.occupied & (cell_map.values >= t)
    return MarkMask(cell_map.spec, marked, cell_map.occupied.copy(), threshold=t)


def f_score(completeness: float, correctness: float) -> float:
    """Harmonic mean of completeness and correctness; 0 when both are 0."""
    if completeness + correctness == 0:
        return 0.0
    return 2.0 * completeness * correctness / (completeness + correctness)


def evaluate(mask: MarkMask, truth: MarkMask) -> SegmentationReport:
    """Score an extracted mask against truth over cells occupied in both.

    Completeness = TP/(TP+FN), correctness = TP/(TP+FP); empty denominators
    score 0 so reports stay finite.  Swapping mask and truth exchanges
    completeness and correctness.
    """
    if mask.spec != truth.spec:
        raise ValueError("masks must share a grid spec")
    both = mask.occupied & truth.occupied
    tp = int((both & mask.marked & truth.marked).sum())
    fp = int((both & mask.marked & ~truth.marked).sum())
    fn = int((both & ~mask.marked & truth.marked).sum())
    completeness = tp / (tp + fn) if tp + fn else 0.0
    correctness = tp / (tp + fp) if tp + fp else 0.0
    return SegmentationReport(
        completeness=completeness,
        correctness=correctness,
        f_score=f_score(completeness, correctness),
        tp=tp,
        fp=fp,
        fn=fn,
    )


def rmse(a: CellMap, b: CellMap) -> float:
    """Root-mean-square intensity difference over the occupancy overlap."""
    if a.spec != b.spec:
        raise ValueError("maps must share a grid spec")
    overlap = a.occupied & b.occupied
    if not overlap.any():
        raise ValueError("maps have no occupancy overlap")
    diff = a.values[overlap] - b.values[overlap]
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(a: CellMap, b: CellMap, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB over the overlap; inf for identical maps."""
    r = rmse(a, b)
    if r == 0.0:
        return float("inf")
    return 20.0 * math.log10(peak / r)
