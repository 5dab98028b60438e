"""Gridded map data model: cell indexing, occupancy sets, sampling and projection.

The map is a dense 2-D grid of reflectivity values (0-255 gray scale) with an
explicit per-cell occupancy mask.  Unoccupied cells store 0.0 and are never
read by any consumer; every operator in this package skips them via the mask
instead of propagating non-finite sentinels.

Linear cell indices follow column-wise vectorization of the (n_y, n_x) value
array: ``n = col * n_y + row``, so the horizontal neighbor of cell ``n`` is
``n + n_y`` and the vertical neighbor is ``n + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a gridded map patch.

    n_x, n_y
        Number of horizontal / vertical cells.
    cell_size
        Side length of a square cell in meters.
    origin
        World coordinates (m) of the corner of cell (row=0, col=0).
    """

    n_x: int
    n_y: int
    cell_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError(f"grid must have at least one cell, got {self.n_x}x{self.n_y}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def n_cells(self) -> int:
        return self.n_x * self.n_y

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (n_y, n_x) of the dense value grid."""
        return (self.n_y, self.n_x)

    def cell_center(self, row, col):
        """World coordinates of the center of cell (row, col). Accepts arrays."""
        ox, oy = self.origin
        x = ox + (np.asarray(col) + 0.5) * self.cell_size
        y = oy + (np.asarray(row) + 0.5) * self.cell_size
        return x, y

    def world_to_cell(self, x, y):
        """Map world coordinates to (row, col) by flooring; may land out of range."""
        ox, oy = self.origin
        col = np.floor((np.asarray(x, dtype=float) - ox) / self.cell_size).astype(np.int64)
        row = np.floor((np.asarray(y, dtype=float) - oy) / self.cell_size).astype(np.int64)
        return row, col


def linear_index(spec: GridSpec, row: int, col: int) -> int:
    """Column-wise linear index ``col * n_y + row`` of cell (row, col)."""
    row_a = np.asarray(row)
    col_a = np.asarray(col)
    if np.any(row_a < 0) or np.any(row_a >= spec.n_y) or np.any(col_a < 0) or np.any(col_a >= spec.n_x):
        raise IndexError(
            f"cell ({row}, {col}) outside grid of {spec.n_y} rows x {spec.n_x} cols"
        )
    out = col_a * spec.n_y + row_a
    return int(out) if out.ndim == 0 else out


def unravel_index(spec: GridSpec, n) -> tuple:
    """Inverse of :func:`linear_index`: linear index -> (row, col)."""
    n_a = np.asarray(n)
    if np.any(n_a < 0) or np.any(n_a >= spec.n_cells):
        raise IndexError(f"linear index {n} outside [0, {spec.n_cells})")
    row = n_a % spec.n_y
    col = n_a // spec.n_y
    if n_a.ndim == 0:
        return int(row), int(col)
    return row, col


@dataclass(frozen=True)
class OccupancySet:
    """Strictly increasing list of linear cell indices.

    Kept sorted so that :func:`sample` / :func:`project` are deterministic.
    """

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1:
            raise ValueError("occupancy indices must be a 1-D sequence")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("occupancy indices must be strictly increasing and non-negative")

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "OccupancySet":
        """Occupancy set of all True cells of a (n_y, n_x) boolean mask."""
        return cls(np.flatnonzero(np.asarray(mask, dtype=bool).ravel(order="F")))

    def to_mask(self, spec: GridSpec) -> np.ndarray:
        if self.indices.size and self.indices[-1] >= spec.n_cells:
            raise ValueError("occupancy index outside grid")
        mask = np.zeros(spec.n_cells, dtype=bool)
        mask[self.indices] = True
        return mask.reshape(spec.shape, order="F")

    def __len__(self) -> int:
        return int(self.indices.size)

    def union(self, other: "OccupancySet") -> "OccupancySet":
        return OccupancySet(np.union1d(self.indices, other.indices))

    def difference(self, other: "OccupancySet") -> "OccupancySet":
        return OccupancySet(np.setdiff1d(self.indices, other.indices, assume_unique=True))

    def issubset(self, other: "OccupancySet") -> bool:
        return bool(np.isin(self.indices, other.indices, assume_unique=True).all())


@dataclass(frozen=True)
class CellMap:
    """Dense reflectivity grid with an occupancy mask.

    ``values`` has shape (n_y, n_x); entries at unoccupied cells are 0.0 and
    carry no meaning.  Treat instances as immutable: the arrays are shared
    read-only across workers.
    """

    spec: GridSpec
    values: np.ndarray
    occupied: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        occupied = np.asarray(self.occupied, dtype=bool)
        if values.shape != self.spec.shape or occupied.shape != self.spec.shape:
            raise ValueError(
                f"array shape {values.shape} does not match grid {self.spec.shape}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "occupied", occupied)

    @classmethod
    def empty(cls, spec: GridSpec) -> "CellMap":
        return cls(spec, np.zeros(spec.shape), np.zeros(spec.shape, dtype=bool))

    @classmethod
    def full(cls, spec: GridSpec, values: np.ndarray) -> "CellMap":
        """Fully-occupied map holding ``values``."""
        return cls(spec, values, np.ones(spec.shape, dtype=bool))

    def occupancy(self) -> OccupancySet:
        return OccupancySet.from_mask(self.occupied)

    @property
    def n_occupied(self) -> int:
        return int(self.occupied.sum())

    def vector(self) -> np.ndarray:
        """Column-wise (linear-index order) flattening of the value grid."""
        return self.values.ravel(order="F")


def sample(cell_map: CellMap, omega: OccupancySet) -> np.ndarray:
    """Extract ``values[omega[i]]`` in order; every index must be occupied."""
    flat_occ = cell_map.occupied.ravel(order="F")
    if omega.indices.size:
        if omega.indices[-1] >= cell_map.spec.n_cells:
            raise ValueError("occupancy index outside grid")
        if not flat_occ[omega.indices].all():
            bad = omega.indices[~flat_occ[omega.indices]][0]
            raise ValueError(f"cell {int(bad)} in the sampling set is not occupied")
    return cell_map.vector()[omega.indices].copy()


def project(x: np.ndarray, omega: OccupancySet, spec: GridSpec) -> CellMap:
    """Scatter vector ``x`` into cells ``omega``; all other cells 0 and unoccupied."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(omega),):
        raise ValueError(f"value vector length {x.shape} does not match |omega| = {len(omega)}")
    if omega.indices.size and omega.indices[-1] >= spec.n_cells:
        raise ValueError("occupancy index outside grid")
    values = np.zeros(spec.n_cells)
    mask = np.zeros(spec.n_cells, dtype=bool)
    values[omega.indices] = x
    mask[omega.indices] = True
    return CellMap(spec, values.reshape(spec.shape, order="F"), mask.reshape(spec.shape, order="F"))
