"""Pose registration of gradient-magnitude maps.

A local map patch is aligned to a prior map by exhaustive search over a
3-DOF pose window (longitudinal, lateral, heading), scoring each candidate
with normalized mutual information between the transformed local map and the
prior over their cell overlap.  NMI rewards statistical dependence rather
than intensity agreement, which keeps the score meaningful when the two maps
come from sensors with different response curves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import CellMap
from .validation import check_positive

log = logging.getLogger(__name__)

# Independence pushes NMI toward 1; below this margin a match is not trustworthy.
LOW_CONFIDENCE_NMI = 1.05


@dataclass(frozen=True)
class Pose:
    """Rigid 3-DOF offset: longitudinal dx, lateral dy (meters), heading (radians).

    Heading is wrapped to (-pi, pi].
    """

    dx: float = 0.0
    dy: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))
        wrapped = (float(self.heading) + np.pi) % (2.0 * np.pi) - np.pi
        if wrapped == -np.pi:
            wrapped = np.pi
        object.__setattr__(self, "heading", wrapped)


@dataclass(frozen=True)
class SearchWindow:
    """Symmetric search bounds (plus/minus each range) and step sizes."""

    dx_range: float = 1.0
    dy_range: float = 1.0
    heading_range: float = 0.03
    dx_step: float = 0.1
    dy_step: float = 0.1
    heading_step: float = 0.005

    def __post_init__(self):
        check_positive(
            dx_step=self.dx_step, dy_step=self.dy_step, heading_step=self.heading_step
        )
        for name in ("dx", "dy", "heading"):
            if getattr(self, f"{name}_range") < getattr(self, f"{name}_step"):
                raise ValueError(f"{name}_range must be at least {name}_step")

    def offsets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Candidate offsets per axis; zero is always an exact member."""

        def axis(bound: float, step: float) -> np.ndarray:
            k = int(np.floor(bound / step + 1e-9))
            return step * np.arange(-k, k + 1)

        return (
            axis(self.dx_range, self.dx_step),
            axis(self.dy_range, self.dy_step),
            axis(self.heading_range, self.heading_step),
        )


@dataclass(frozen=True)
class RegistrationResult:
    """Best pose with its score; iterable as ``pose, score = register(...)``."""

    pose: Pose
    score: float
    n_candidates: int
    low_confidence: bool
    scores: tuple[tuple[float, float, float, float], ...] | None = field(
        default=None, repr=False
    )

    def __iter__(self):
        return iter((self.pose, self.score))


def _bin_indices(values: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bin index over the min-max range; constant input is bin 0."""
    lo = values.min()
    hi = values.max()
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.intp)
    idx = ((values - lo) * (bins / (hi - lo))).astype(np.intp)
    return np.minimum(idx, bins - 1)


def _entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def _nmi_from_values(va: np.ndarray, vb: np.ndarray, bins: int) -> float:
    ia = _bin_indices(va, bins)
    ib = _bin_indices(vb, bins)
    joint = np.bincount(ia * bins + ib, minlength=bins * bins).astype(np.float64)
    h_joint = _entropy_bits(joint)
    if h_joint == 0.0:
        # Single occupied joint bin: both inputs constant, perfect dependence.
        return 2.0
    grid = joint.reshape(bins, bins)
    return (_entropy_bits(grid.sum(axis=1)) + _entropy_bits(grid.sum(axis=0))) / h_joint


def nmi(a: CellMap, b: CellMap, bins: int = 64) -> float:
    """Normalized mutual information (H(A)+H(B))/H(A,B) in bits, range [1, 2].

    Histograms use ``bins`` equal-width bins over each input's own min-max
    range, computed only on cells occupied in both maps.
    """
    if a.spec != b.spec:
        raise ValueError("maps must share a grid spec")
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    overlap = a.occupied & b.occupied
    n = int(overlap.sum())
    if n < 2:
        raise ValueError(f"joint occupancy has {n} cells; at least 2 required")
    return _nmi_from_values(a.values[overlap], b.values[overlap], bins)


def register(
    prior: CellMap,
    local: CellMap,
    window: SearchWindow | None = None,
    bins: int = 64,
    return_scores: bool = False,
) -> RegistrationResult:
    """Exhaustive pose search maximizing NMI between local and prior maps.

    A candidate pose rotates the local map by ``heading`` about its own
    center, then translates it by ``(dx, dy)``; the transformed map is
    resampled onto the prior grid by nearest-neighbor lookup and scored on
    the overlap.  Ties resolve to the smallest translation norm, then the
    smallest absolute heading, so the result is deterministic.

    Candidates whose overlap has fewer than 2 cells are skipped; if every
    candidate is skipped the maps do not meaningfully overlap and an error is
    raised.  A best score below ``LOW_CONFIDENCE_NMI`` is flagged and logged.
    """
    window = window or SearchWindow()
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    dxs, dys, hs = window.offsets()
    if not (dxs.size and dys.size and hs.size):
        raise ValueError("search window produced no candidate poses")

    prior_occ = prior.occupied
    if not prior_occ.any() or not local.occupied.any():
        raise ValueError("both maps need occupied cells to register")
    rows, cols = np.nonzero(prior_occ)
    px, py = prior.spec.cell_center(rows, cols)
    prior_vals = prior.values[rows, cols]

    lspec = local.spec
    cx = lspec.origin[0] + 0.5 * lspec.n_x * lspec.cell_size
    cy = lspec.origin[1] + 0.5 * lspec.n_y * lspec.cell_size

    best_key = None
    best = None
    surface = [] if return_scores else None

    for h in hs:
        cos_h, sin_h = np.cos(h), np.sin(h)
        # Inverse rotation of prior points about the local center.
        ux = cos_h * (px - cx) + sin_h * (py - cy)
        uy = -sin_h * (px - cx) + cos_h * (py - cy)
        for dx in dxs:
            for dy in dys:
                qx = ux - (cos_h * dx + sin_h * dy) + cx
                qy = uy - (-sin_h * dx + cos_h * dy) + cy
                ci = np.floor((qx - lspec.origin[0]) / lspec.cell_size).astype(np.intp)
                ri = np.floor((qy - lspec.origin[1]) / lspec.cell_size).astype(np.intp)
                inside = (ci >= 0) & (ci < lspec.n_x) & (ri >= 0) & (ri < lspec.n_y)
                hit = np.zeros(inside.shape, dtype=bool)
                hit[inside] = local.occupied[ri[inside], ci[inside]]
                n_overlap = int(hit.sum())
                if n_overlap < 2:
                    score = -np.inf
                else:
                    score = _nmi_from_values(
                        local.values[ri[hit], ci[hit]], prior_vals[hit], bins
                    )
                if surface is not None:
                    surface.append((float(dx), float(dy), float(h), float(score)))
                key = (-score, dx * dx + dy * dy, abs(h), h, dx, dy)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (float(dx), float(dy), float(h), float(score))

    if best is None or not np.isfinite(best[3]):
        raise RuntimeError("no candidate pose produced enough overlap to score")

    pose = Pose(best[0], best[1], best[2])
    low = best[3] < LOW_CONFIDENCE_NMI
    if low:
        log.warning(
            "registration score %.4f is below the confidence floor %.2f; "
            "pose (%.3f, %.3f, %.4f) is unreliable",
            best[3], LOW_CONFIDENCE_NMI, pose.dx, pose.dy, pose.heading,
        )
    return RegistrationResult(
        pose=pose,
        score=best[3],
        n_candidates=int(dxs.size * dys.size * hs.size),
        low_confidence=low,
        scores=tuple(surface) if surface is not None else None,
    )
