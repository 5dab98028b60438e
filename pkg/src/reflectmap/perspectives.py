"""Binning of globally-projected reflectivity measurements into map-perspectives.

A perspective is identified by (beam, incidence bin, range bin).  For each
perspective the cell value is the arithmetic mean of the measurements that
fell into the cell, which unbiases for the non-uniform number of measurements
and shrinks per-cell noise by the measurement count.

For the default non-canted scanner geometry the incidence angle and range of a
beam stay approximately constant over a revolution, so each beam maps to
exactly one (incidence, range) bin and the number of perspectives equals the
number of beams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .grid import CellMap, GridSpec, OccupancySet

DEFAULT_INCIDENCE_BIN_DEG = 2.0
DEFAULT_RANGE_BIN_M = 2.0


@dataclass(frozen=True, order=True)
class PerspectiveKey:
    """Observer-perspective identifier: laser index plus incidence/range bins.

    Ordering is lexicographic on (beam, incidence_bin, range_bin); ties across
    the package break toward the smallest key.
    """

    beam: int
    incidence_bin: int
    range_bin: int

    def __post_init__(self):
        if self.beam < 0 or self.incidence_bin < 0 or self.range_bin < 0:
            raise ValueError(f"perspective key fields must be non-negative: {self}")

    @classmethod
    def from_raw(
        cls,
        beam: int,
        incidence_deg: float,
        range_m: float,
        incidence_bin_deg: float = DEFAULT_INCIDENCE_BIN_DEG,
        range_bin_m: float = DEFAULT_RANGE_BIN_M,
    ) -> "PerspectiveKey":
        """Bin raw incidence (degrees) and range (meters) into a key."""
        return cls(
            int(beam),
            int(math.floor(incidence_deg / incidence_bin_deg)),
            int(math.floor(range_m / range_bin_m)),
        )


@dataclass(frozen=True)
class Measurement:
    """One globally-projected reflectivity return.

    Incidence (degrees from vertical) and range (meters) stay raw here;
    binning into a perspective happens at map-building time.
    """

    world_x: float
    world_y: float
    reflectivity: float
    beam: int
    incidence_deg: float
    range_m: float

    def __post_init__(self):
        for name in ("world_x", "world_y", "reflectivity", "incidence_deg", "range_m"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite {name} in measurement")
        if self.beam < 0:
            raise ValueError(f"beam index must be non-negative, got {self.beam}")

    def key(
        self,
        incidence_bin_deg: float = DEFAULT_INCIDENCE_BIN_DEG,
        range_bin_m: float = DEFAULT_RANGE_BIN_M,
    ) -> PerspectiveKey:
        return PerspectiveKey.from_raw(
            self.beam, self.incidence_deg, self.range_m, incidence_bin_deg, range_bin_m
        )


class MeasurementBatch:
    """Array-backed sequence of measurements.

    Iterating yields :class:`Measurement` records; bulk consumers read the
    column arrays directly.  ``dropped`` counts samples discarded upstream
    (e.g. beam rings leaving the simulated scene).
    """

    def __init__(self, x, y, reflectivity, beam, incidence_deg, range_m, dropped: int = 0):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.reflectivity = np.asarray(reflectivity, dtype=np.float64)
        self.beam = np.asarray(beam, dtype=np.int64)
        self.incidence_deg = np.asarray(incidence_deg, dtype=np.float64)
        self.range_m = np.asarray(range_m, dtype=np.float64)
        self.dropped = int(dropped)
        n = len(self.x)
        for col in (self.y, self.reflectivity, self.beam, self.incidence_deg, self.range_m):
            if len(col) != n:
                raise ValueError("measurement columns have mismatched lengths")

    @classmethod
    def from_measurements(cls, measurements: Iterable[Measurement]) -> "MeasurementBatch":
        ms = list(measurements)
        return cls(
            [m.world_x for m in ms],
            [m.world_y for m in ms],
            [m.reflectivity for m in ms],
            [m.beam for m in ms],
            [m.incidence_deg for m in ms],
            [m.range_m for m in ms],
        )

    def __len__(self) -> int:
        return int(self.x.size)

    def __getitem__(self, i: int) -> Measurement:
        return Measurement(
            float(self.x[i]),
            float(self.y[i]),
            float(self.reflectivity[i]),
            int(self.beam[i]),
            float(self.incidence_deg[i]),
            float(self.range_m[i]),
        )

    def __iter__(self) -> Iterator[Measurement]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class PerspectiveView:
    """One map-perspective: cell means plus the per-cell measurement count."""

    cell_map: CellMap
    counts: np.ndarray = field(repr=False)

    def occupancy(self) -> OccupancySet:
        return self.cell_map.occupancy()


@dataclass(frozen=True)
class PerspectiveSet:
    """Immutable collection PerspectiveKey -> PerspectiveView.

    ``dropped`` tallies measurements that fell outside the grid and were
    skipped during binning.
    """

    spec: GridSpec
    views: Mapping[PerspectiveKey, PerspectiveView]
    dropped: int = 0

    def keys(self) -> list[PerspectiveKey]:
        """Perspective keys in canonical (sorted) order."""
        return sorted(self.views.keys())

    def __len__(self) -> int:
        return len(self.views)

    def __getitem__(self, key: PerspectiveKey) -> PerspectiveView:
        return self.views[key]

    def __contains__(self, key: PerspectiveKey) -> bool:
        return key in self.views


def build_perspectives(
    measurements,
    spec: GridSpec,
    incidence_bin_deg: float = DEFAULT_INCIDENCE_BIN_DEG,
    range_bin_m: float = DEFAULT_RANGE_BIN_M,
) -> PerspectiveSet:
    """Bin a measurement stream into per-perspective cell-mean maps.

    Measurements outside the grid (including points exactly on the upper
    boundary) are skipped and tallied in ``dropped``.  Per-cell accumulation
    sorts measurements into a canonical (key, cell, value) order before
    summing, so any permutation of the input stream produces bit-identical
    maps.
    """
    if not isinstance(measurements, MeasurementBatch):
        measurements = MeasurementBatch.from_measurements(measurements)
    if not (incidence_bin_deg > 0 and range_bin_m > 0):
        raise ValueError("bin widths must be positive")

    if len(measurements) == 0:
        return PerspectiveSet(spec, {}, dropped=measurements.dropped)

    row, col = spec.world_to_cell(measurements.x, measurements.y)
    inside = (row >= 0) & (row < spec.n_y) & (col >= 0) & (col < spec.n_x)
    dropped = measurements.dropped + int(np.count_nonzero(~inside))

    cell = col[inside] * spec.n_y + row[inside]
    refl = measurements.reflectivity[inside]
    beam = measurements.beam[inside]
    ibin = np.floor(measurements.incidence_deg[inside] / incidence_bin_deg).astype(np.int64)
    rbin = np.floor(measurements.range_m[inside] / range_bin_m).astype(np.int64)

    if cell.size == 0:
        return PerspectiveSet(spec, {}, dropped=dropped)

    # Canonical order: perspective, then cell, then value.
    order = np.lexsort((refl, cell, rbin, ibin, beam))
    cell = cell[order]
    refl = refl[order]
    beam, ibin, rbin = beam[order], ibin[order], rbin[order]

    key_cols = np.stack([beam, ibin, rbin], axis=1)
    group_start = np.ones(cell.size, dtype=bool)
    group_start[1:] = np.any(key_cols[1:] != key_cols[:-1], axis=1) | (cell[1:] != cell[:-1])
    starts = np.flatnonzero(group_start)

    sums = np.add.reduceat(refl, starts)
    counts = np.diff(np.append(starts, cell.size))
    g_cell = cell[starts]
    g_key = key_cols[starts]

    views: dict[PerspectiveKey, PerspectiveView] = {}
    key_start = np.ones(starts.size, dtype=bool)
    key_start[1:] = np.any(g_key[1:] != g_key[:-1], axis=1)
    key_bounds = np.append(np.flatnonzero(key_start), starts.size)
    for a, b in zip(key_bounds[:-1], key_bounds[1:]):
        key = PerspectiveKey(int(g_key[a, 0]), int(g_key[a, 1]), int(g_key[a, 2]))
        values = np.zeros(spec.n_cells)
        count = np.zeros(spec.n_cells, dtype=np.int64)
        values[g_cell[a:b]] = sums[a:b] / counts[a:b]
        count[g_cell[a:b]] = counts[a:b]
        occupied = count > 0
        views[key] = PerspectiveView(
            CellMap(
                spec,
                values.reshape(spec.shape, order="F"),
                occupied.reshape(spec.shape, order="F"),
            ),
            count.reshape(spec.shape, order="F"),
        )
    return PerspectiveSet(spec, views, dropped=dropped)


def union_occupancy(pset: PerspectiveSet) -> OccupancySet:
    """Union of all per-perspective occupancies (the map domain)."""
    if not pset.views:
        return OccupancySet(np.empty(0, dtype=np.int64))
    masks = [view.cell_map.occupied for view in pset.views.values()]
    return OccupancySet.from_mask(np.logical_or.reduce(masks))


def naive_mean_map(pset: PerspectiveSet) -> CellMap:
    """Count-weighted average of the perspective maps.

    Recovers the per-cell mean of the raw measurements up to floating-point
    rounding of the per-perspective means.  This is the baseline map that
    exhibits ring, stop and u-turn artifacts.
    """
    num = np.zeros(pset.spec.shape)
    den = np.zeros(pset.spec.shape)
    for key in pset.keys():
        view = pset[key]
        num += view.cell_map.values * view.counts
        den += view.counts
    occ = den > 0
    values = np.divide(num, den, out=np.zeros_like(num), where=occ)
    return CellMap(pset.spec, values, occ)


def naive_map(measurements, spec: GridSpec) -> CellMap:
    """Per-cell mean of the raw measurement stream, ignoring perspectives.

    Exact: the stream is binned as a single collapsed perspective, so each
    cell holds the mean of its own measurements with the same canonical
    summation order as :func:`build_perspectives`.
    """
    if not isinstance(measurements, MeasurementBatch):
        measurements = MeasurementBatch.from_measurements(measurements)
    collapsed = MeasurementBatch(
        measurements.x,
        measurements.y,
        measurements.reflectivity,
        np.zeros(len(measurements), dtype=np.int64),
        np.zeros(len(measurements)),
        np.zeros(len(measurements)),
        dropped=measurements.dropped,
    )
    pset = build_perspectives(collapsed, spec)
    if not pset.views:
        return CellMap.empty(spec)
    return pset[PerspectiveKey(0, 0, 0)].cell_map
