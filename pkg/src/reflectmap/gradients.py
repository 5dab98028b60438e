"""Occupancy-aware discrete differential operators.

Forward-difference gradient, five-point Laplacian and the matching divergence
used to assemble the Poisson right-hand side.  A gradient component whose
stencil straddles an unoccupied cell is marked invalid rather than zero-filled;
downstream reductions skip invalid entries.

All operators are matrix-free: a 400x400 patch has 160,000 cells and explicit
matrices would be wasteful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import CellMap, GridSpec


@dataclass(frozen=True)
class GradientField:
    """Per-cell forward differences with per-component validity masks.

    ``gx[r, c]`` is the difference to the horizontal neighbor (c+1),
    ``gy[r, c]`` to the vertical neighbor (r+1).  A component is valid only
    where both cells of its stencil were occupied in the source map; the last
    column (for gx) and last row (for gy) are always invalid.
    """

    spec: GridSpec
    gx: np.ndarray
    gy: np.ndarray
    valid_x: np.ndarray = field(repr=False)
    valid_y: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("gx", "gy", "valid_x", "valid_y"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != self.spec.shape:
                raise ValueError(f"{name} shape {arr.shape} does not match grid {self.spec.shape}")
        object.__setattr__(self, "gx", np.asarray(self.gx, dtype=np.float64))
        object.__setattr__(self, "gy", np.asarray(self.gy, dtype=np.float64))
        object.__setattr__(self, "valid_x", np.asarray(self.valid_x, dtype=bool))
        object.__setattr__(self, "valid_y", np.asarray(self.valid_y, dtype=bool))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GradientField":
        z = np.zeros(spec.shape)
        return cls(spec, z, z.copy(), np.zeros(spec.shape, bool), np.zeros(spec.shape, bool))


def gradient(cell_map: CellMap) -> GradientField:
    """First-order forward-difference gradient of an occupancy-masked map."""
    spec = cell_map.spec
    v = cell_map.values
    occ = cell_map.occupied

    gx = np.zeros(spec.shape)
    gy = np.zeros(spec.shape)
    valid_x = np.zeros(spec.shape, dtype=bool)
    valid_y = np.zeros(spec.shape, dtype=bool)

    valid_x[:, :-1] = occ[:, :-1] & occ[:, 1:]
    valid_y[:-1, :] = occ[:-1, :] & occ[1:, :]
    gx[:, :-1] = np.where(valid_x[:, :-1], v[:, 1:] - v[:, :-1], 0.0)
    gy[:-1, :] = np.where(valid_y[:-1, :], v[1:, :] - v[:-1, :], 0.0)
    return GradientField(spec, gx, gy, valid_x, valid_y)


def laplacian(x: np.ndarray, spec: GridSpec, occupied: np.ndarray | None = None) -> np.ndarray:
    """Five-point Laplacian of the linear-index vector ``x``.

    Cells on the grid border (and, when ``occupied`` is given, cells next to
    unoccupied neighbors) use the reduced stencil: the center coefficient is
    minus the number of participating neighbors.  This keeps the operator
    symmetric and makes ``divergence(gradient(m)) == laplacian(m.vector())``
    exact on every cell of a fully-occupied map.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.n_cells,):
        raise ValueError(f"expected vector of length {spec.n_cells}, got shape {x.shape}")
    g = x.reshape(spec.shape, order="F")
    if occupied is None:
        occupied = np.ones(spec.shape, dtype=bool)
    out = np.zeros(spec.shape)

    # Accumulate (neighbor - cell) over edges where both endpoints participate.
    ex = occupied[:, :-1] & occupied[:, 1:]
    dx = np.where(ex, g[:, 1:] - g[:, :-1], 0.0)
    out[:, :-1] += dx
    out[:, 1:] -= dx

    ey = occupied[:-1, :] & occupied[1:, :]
    dy = np.where(ey, g[1:, :] - g[:-1, :], 0.0)
    out[:-1, :] += dy
    out[1:, :] -= dy
    return out.ravel(order="F")


def divergence(g: GradientField) -> np.ndarray:
    """Backward-difference divergence of a gradient field, invalid entries as 0.

    Defined so that ``divergence(gradient(m))`` equals the (reduced-stencil)
    Laplacian of ``m`` and ``<gradient(x), g> == <x, -divergence(g)>``.
    """
    gx = np.where(g.valid_x, g.gx, 0.0)
    gy = np.where(g.valid_y, g.gy, 0.0)
    out = np.zeros(g.spec.shape)
    out += gx
    out[:, 1:] -= gx[:, :-1]
    out += gy
    out[1:, :] -= gy[:-1, :]
    return out.ravel(order="F")


def gradient_magnitude(g: GradientField) -> CellMap:
    """Isotropic magnitude sqrt(gx^2 + gy^2), 0 standing in for invalid components.

    A cell is occupied in the result when at least one component is valid.
    """
    gx = np.where(g.valid_x, g.gx, 0.0)
    gy = np.where(g.valid_y, g.gy, 0.0)
    mag = np.hypot(gx, gy)
    occ = g.valid_x | g.valid_y
    return CellMap(g.spec, np.where(occ, mag, 0.0), occ)
