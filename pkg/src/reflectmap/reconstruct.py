"""Map reconstruction from a fused gradient field.

The fused gradients determine the map only up to the data lost at invalid
components and an integration constant, so absolute reflectivity is pinned by
Dirichlet constraints: the cells of one reference perspective whose values
fall in the most common intensity bin keep their exact values, and the
remaining occupied cells are solved for so that the Laplacian of the result
matches the divergence of the fused field.

The linear system is solved iteratively with Nesterov acceleration on the
convex quadratic whose gradient is ``b - Phi x``; the grid operator norm is
bounded by 8 (four neighbors, center coefficient up to -4), which makes the
default step 1/8 unconditionally stable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .gradients import GradientField, divergence, gradient, gradient_magnitude, laplacian
from .grid import CellMap, GridSpec, OccupancySet
from .perspectives import PerspectiveKey, PerspectiveSet
from .validation import check_positive

log = logging.getLogger(__name__)

# Gershgorin: |center| + sum of neighbor coefficients <= 4 + 4 on a 4-connected grid.
OPERATOR_NORM_BOUND = 8.0


@dataclass(frozen=True)
class ReconstructionConfig:
    """Solver settings.  ``gamma`` must not exceed ``1 / OPERATOR_NORM_BOUND``."""

    gamma: float = 1.0 / 8.0
    max_iters: int = 256
    rel_tol: float = 1e-3
    clamp_lo: float = 0.0
    clamp_hi: float = 255.0

    def __post_init__(self):
        check_positive(gamma=self.gamma, max_iters=self.max_iters, rel_tol=self.rel_tol)
        if not self.rel_tol < 1.0:
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.gamma > 1.0 / OPERATOR_NORM_BOUND + 1e-12:
            raise ValueError(
                f"step size gamma={self.gamma:g} is unstable for the grid operator; "
                f"use gamma <= {1.0 / OPERATOR_NORM_BOUND:g}"
            )
        if not self.clamp_hi > self.clamp_lo:
            raise ValueError("clamp_hi must exceed clamp_lo")


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet constraint cells with their pinned values.

    ``values[i]`` belongs to ``boundary.indices[i]``; the values pass through
    reconstruction bit-exact.  ``reference_key`` records which perspective the
    cells were taken from, when one was used.
    """

    spec: GridSpec
    boundary: OccupancySet
    values: np.ndarray = field(repr=False)
    reference_key: PerspectiveKey | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (len(self.boundary),):
            raise ValueError(
                f"{values.shape[0] if values.ndim == 1 else values.shape} values "
                f"for {len(self.boundary)} boundary cells"
            )
        if len(self.boundary) and self.boundary.indices[-1] >= self.spec.n_cells:
            raise ValueError("boundary index outside grid")


def choose_reference(pset: PerspectiveSet) -> PerspectiveKey:
    """Perspective with the largest mean gradient magnitude over valid cells.

    High mean magnitude indicates strong surviving contrast, so that
    perspective anchors the absolute intensities best.  Ties break toward the
    smallest key so the choice is reproducible.
    """
    best_key = None
    best_mean = -np.inf
    for key in pset.keys():
        mag = gradient_magnitude(gradient(pset[key].cell_map))
        mean = float(mag.values[mag.occupied].mean()) if mag.n_occupied else 0.0
        if mean > best_mean:
            best_key, best_mean = key, mean
    if best_key is None:
        raise ValueError("perspective set is empty")
    return best_key


def boundary_set(
    cell_map: CellMap,
    bin_width: float = 1.0,
    key: PerspectiveKey | None = None,
) -> BoundaryCondition:
    """Constraint cells of a reference map: occupants of the modal intensity bin.

    Intensities are histogrammed with ``bin_width``-wide bins anchored at 0
    (one gray level by default); the cells whose value falls in the most
    frequent bin become the Dirichlet set, keeping their exact values.  Ties
    resolve toward the lower bin.
    """
    if not bin_width > 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    occ = cell_map.occupied
    if not occ.any():
        raise ValueError("reference map has no occupied cells")
    vals = cell_map.values[occ]
    in_range = (vals >= 0.0) & (vals <= 255.0)
    if not in_range.any():
        raise ValueError("reference map has no values inside [0, 255]")
    bins = np.floor(vals[in_range] / bin_width).astype(np.intp)
    modal = int(np.argmax(np.bincount(bins)))

    sel = np.zeros(vals.shape, dtype=bool)
    sel[in_range] = bins == modal
    member = np.zeros(cell_map.spec.shape, dtype=bool)
    member[occ] = sel

    boundary = OccupancySet.from_mask(member)
    values = cell_map.vector()[boundary.indices].copy()
    return BoundaryCondition(cell_map.spec, boundary, values, key)


def reference_boundary(pset: PerspectiveSet, bin_width: float = 1.0) -> BoundaryCondition:
    """Select the reference perspective and extract its constraint cells."""
    key = choose_reference(pset)
    return boundary_set(pset[key].cell_map, bin_width=bin_width, key=key)


def _missing_gradient_cells(g: GradientField, occ2d: np.ndarray, free_idx: np.ndarray) -> int:
    """Free cells whose divergence stencil touched an edge with no fused data.

    An edge connects two occupied cells; when the fused field marks it invalid
    its contribution is read as 0, which locally flattens the solution.  The
    count sizes that effect for diagnostics.
    """
    missing_x = np.zeros(g.spec.shape, dtype=bool)
    missing_y = np.zeros(g.spec.shape, dtype=bool)
    missing_x[:, :-1] = occ2d[:, :-1] & occ2d[:, 1:] & ~g.valid_x[:, :-1]
    missing_y[:-1, :] = occ2d[:-1, :] & occ2d[1:, :] & ~g.valid_y[:-1, :]

    touched = missing_x | missing_y
    touched[:, 1:] |= missing_x[:, :-1]
    touched[1:, :] |= missing_y[:-1, :]
    return int(np.count_nonzero(touched.ravel(order="F")[free_idx]))


def poisson_reconstruct(
    g_hat: GradientField,
    bc: BoundaryCondition,
    omega: OccupancySet,
    cfg: ReconstructionConfig | None = None,
    return_info: bool = False,
):
    """Solve the constrained Poisson system over the occupied cells.

    ``omega`` is the full reconstruction domain; cells outside it do not
    exist for the operator (no phantom zero neighbors), and the constraint
    cells must lie inside it.  The free unknowns start at the mean constraint
    value and are iterated with Nesterov momentum until the relative step
    drops below ``cfg.rel_tol`` or ``cfg.max_iters`` is reached; afterwards
    the free values are clamped to the intensity range once.  Constraint
    cells pass through untouched.

    Returns the reconstructed map; with ``return_info`` also a dict holding
    the iteration count, final residual objective ``0.5 * ||Phi x - b||^2``,
    final relative step and the per-iteration history of both.
    """
    cfg = cfg or ReconstructionConfig()
    spec = g_hat.spec
    if bc.spec != spec:
        raise ValueError("boundary condition grid does not match the gradient field")
    if not bc.boundary.issubset(omega):
        raise ValueError("constraint cells must lie inside the reconstruction domain")

    occ2d = omega.to_mask(spec)
    free = omega.difference(bc.boundary)
    free_idx = free.indices
    bnd_idx = bc.boundary.indices

    full = np.zeros(spec.n_cells)
    full[bnd_idx] = bc.values

    if len(free) == 0:
        result = CellMap(spec, full.reshape(spec.shape, order="F"), occ2d)
        if return_info:
            return result, {
                "iterations": 0,
                "objective": 0.0,
                "rel_step": 0.0,
                "converged": True,
                "free_cells": 0,
                "boundary_cells": len(bc.boundary),
                "history": [],
            }
        return result

    div = divergence(g_hat)
    b = div[free_idx] - laplacian(full, spec, occ2d)[free_idx]

    def apply_phi(xf: np.ndarray) -> np.ndarray:
        buf = np.zeros(spec.n_cells)
        buf[free_idx] = xf
        return laplacian(buf, spec, occ2d)[free_idx]

    x_prev = np.full(len(free), float(bc.values.mean()) if len(bc.boundary) else 0.0)
    momentum = x_prev.copy()
    q_prev = 1.0
    history: list[tuple[int, float, float]] = []
    rel = np.inf
    initial_objective = 0.5 * float(np.sum((apply_phi(x_prev) - b) ** 2))
    objective = initial_objective
    iterations = 0

    for t in range(1, cfg.max_iters + 1):
        x = momentum + cfg.gamma * (apply_phi(momentum) - b)
        if not np.isfinite(x).all():
            raise RuntimeError(f"reconstruction produced non-finite values at iteration {t}")
        q = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * q_prev * q_prev))
        momentum = x + ((q_prev - 1.0) / q) * (x - x_prev)
        rel = float(np.linalg.norm(x - x_prev) / max(np.linalg.norm(x_prev), 1e-30))
        residual = apply_phi(x) - b
        objective = 0.5 * float(residual @ residual)
        history.append((t, objective, rel))
        x_prev, q_prev = x, q
        iterations = t
        if rel < cfg.rel_tol:
            break

    converged = rel < cfg.rel_tol
    if not converged:
        log.info(
            "reconstruction stopped at max_iters=%d (rel step %.3g, objective %.6g)",
            cfg.max_iters, rel, objective,
        )

    clamped = np.clip(x_prev, cfg.clamp_lo, cfg.clamp_hi)
    full[free_idx] = clamped
    full[bnd_idx] = bc.values
    result = CellMap(spec, full.reshape(spec.shape, order="F"), occ2d)
    if return_info:
        return result, {
            "iterations": iterations,
            "objective": objective,
            "initial_objective": initial_objective,
            "rel_step": rel,
            "converged": converged,
            "free_cells": len(free),
            "boundary_cells": len(bc.boundary),
            "clamped_cells": int(np.count_nonzero(clamped != x_prev)),
            "missing_gradient_cells": _missing_gradient_cells(g_hat, occ2d, free_idx),
            "history": history,
        }
    return result
