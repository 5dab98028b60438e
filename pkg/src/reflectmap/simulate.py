"""Synthetic ground scenes, per-beam responses and scan generation.

The simulator provides ground truth for the whole pipeline: procedural
reflectivity scenes, a monotone nonlinear response per laser beam, and a
rotating multi-beam scan pattern around a moving vehicle.  Each beam of a
non-canted scanner intersects the ground on a ring of fixed radius, so every
beam observes the world through one fixed (incidence, range) pair; that makes
the beam index a complete stand-in for the observer perspective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .grid import CellMap, GridSpec
from .perspectives import MeasurementBatch, PerspectiveKey

SCENE_RECIPES = ("blank", "lanes", "crosswalk", "checkerboard")


@dataclass(frozen=True)
class SceneRecipe:
    """Procedural scene parameters.

    ``asphalt`` and ``paint`` are the two reflectivity levels; stripes repeat
    every ``spacing`` meters with width ``stripe_width``; ``tile`` is the
    checkerboard square side.  All lengths in meters.
    """

    name: str = "lanes"
    asphalt: float = 25.0
    paint: float = 120.0
    stripe_width: float = 0.1
    spacing: float = 3.5
    tile: float = 1.0

    def __post_init__(self):
        for level in (self.asphalt, self.paint):
            if not 0.0 <= level <= 255.0:
                raise ValueError(f"reflectivity level {level} outside [0, 255]")
        if not (self.stripe_width > 0 and self.spacing > 0 and self.tile > 0):
            raise ValueError("stripe_width, spacing and tile must be positive")


@dataclass(frozen=True)
class GroundScene:
    """Ground-truth reflectivity with the painted-feature mask."""

    truth: CellMap
    feature_mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        mask = np.asarray(self.feature_mask, dtype=bool)
        object.__setattr__(self, "feature_mask", mask)
        if not self.truth.occupied.all():
            raise ValueError("scene truth must be occupied everywhere")
        if mask.shape != self.truth.spec.shape:
            raise ValueError("feature mask shape does not match the scene grid")


@dataclass(frozen=True)
class LaserModel:
    """Monotone per-beam intensity response plus the beam's ring geometry.

    The response is ``clamp(gain * (x/255)^gamma_exp * 255 + offset, 0, 255)``
    followed by additive Gaussian noise of std ``sigma`` and a second clamp.
    ``ground_radius`` is the radius of the beam's ground ring around the
    vehicle; together with ``sensor_height`` it fixes the beam's incidence
    angle and slant range, which are filled in automatically when left None
    and should agree with the bins in ``key``.
    """

    key: PerspectiveKey
    gain: float = 1.0
    offset: float = 0.0
    gamma_exp: float = 1.0
    sigma: float = 0.0
    ground_radius: float = 5.0
    sensor_height: float = 2.0
    incidence_deg: float | None = None
    range_m: float | None = None

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError(f"gain must be non-negative for monotonicity, got {self.gain}")
        if not self.gamma_exp > 0:
            raise ValueError(f"gamma_exp must be positive, got {self.gamma_exp}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not (self.ground_radius > 0 and self.sensor_height > 0):
            raise ValueError("ground_radius and sensor_height must be positive")
        if self.incidence_deg is None:
            object.__setattr__(
                self,
                "incidence_deg",
                math.degrees(math.atan2(self.ground_radius, self.sensor_height)),
            )
        if self.range_m is None:
            object.__setattr__(
                self, "range_m", math.hypot(self.ground_radius, self.sensor_height)
            )

    def response(self, x) -> np.ndarray:
        """Noise-free response applied element-wise, clamped to [0, 255]."""
        x = np.asarray(x, dtype=np.float64)
        return np.clip(self.gain * (x / 255.0) ** self.gamma_exp * 255.0 + self.offset, 0.0, 255.0)


@dataclass(frozen=True)
class ScanConfig:
    """One scan session: vehicle trajectory, beams and sampling rates.

    ``trajectory`` rows are (time_s, x_m, y_m) with strictly increasing
    times; the vehicle position during a revolution is linearly interpolated.
    A single waypoint means a stationary vehicle and yields one revolution.
    """

    trajectory: np.ndarray
    beams: tuple[LaserModel, ...]
    revolutions_per_second: float = 10.0
    points_per_revolution: int = 180
    rng_seed: int = 0

    def __post_init__(self):
        traj = np.asarray(self.trajectory, dtype=np.float64)
        if traj.ndim != 2 or traj.shape[1] != 3 or traj.shape[0] < 1:
            raise ValueError("trajectory must be an (n, 3) array of (t, x, y) rows")
        if traj.shape[0] > 1 and not (np.diff(traj[:, 0]) > 0).all():
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "trajectory", traj)
        object.__setattr__(self, "beams", tuple(self.beams))
        if not self.beams:
            raise ValueError("at least one beam required")
        if not self.revolutions_per_second > 0:
            raise ValueError("revolutions_per_second must be positive")
        if self.points_per_revolution < 1:
            raise ValueError("points_per_revolution must be at least 1")


def make_scene(spec: GridSpec, recipe: SceneRecipe) -> GroundScene:
    """Deterministic procedural scene on the given grid.

    Cells are classified by their center position relative to the grid
    origin: ``lanes`` paints stripes of constant y (along the driving
    direction), ``crosswalk`` stripes of constant x (across it),
    ``checkerboard`` alternating square tiles, ``blank`` nothing.
    """
    if recipe.name not in SCENE_RECIPES:
        raise ValueError(
            f"unknown scene recipe {recipe.name!r}; choose one of {', '.join(SCENE_RECIPES)}"
        )
    rows, cols = np.mgrid[0 : spec.n_y, 0 : spec.n_x]
    cx, cy = spec.cell_center(rows, cols)
    rel_x = cx - spec.origin[0]
    rel_y = cy - spec.origin[1]

    if recipe.name == "blank":
        painted = np.zeros(spec.shape, dtype=bool)
    elif recipe.name == "lanes":
        painted = np.mod(rel_y, recipe.spacing) < recipe.stripe_width
    elif recipe.name == "crosswalk":
        painted = np.mod(rel_x, recipe.spacing) < recipe.stripe_width
    else:
        painted = (
            np.floor(rel_x / recipe.tile).astype(np.int64)
            + np.floor(rel_y / recipe.tile).astype(np.int64)
        ) % 2 == 0

    values = np.where(painted, recipe.paint, recipe.asphalt)
    return GroundScene(CellMap.full(spec, values), painted)


def straight_trajectory(
    start: tuple[float, float],
    heading: float = 0.0,
    speed: float = 5.0,
    duration: float = 1.0,
) -> np.ndarray:
    """Constant-velocity (t, x, y) polyline starting at t=0."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    if duration == 0:
        return np.array([[0.0, start[0], start[1]]])
    end = (
        start[0] + speed * duration * math.cos(heading),
        start[1] + speed * duration * math.sin(heading),
    )
    return np.array([[0.0, start[0], start[1]], [duration, end[0], end[1]]])


def default_beams(
    n_beams: int = 64,
    sensor_height: float = 2.0,
    radius_min: float = 2.0,
    radius_max: float = 12.0,
    gain_range: tuple[float, float] = (1.0, 1.0),
    offset_range: tuple[float, float] = (0.0, 0.0),
    gamma_range: tuple[float, float] = (1.0, 1.0),
    sigma: float = 0.0,
    seed: int | None = None,
) -> tuple[LaserModel, ...]:
    """Beam set with evenly spread ring radii and seeded random responses.

    Beam b gets ring radius ``radius_min + b * (radius_max - radius_min) /
    (n_beams - 1)``; its incidence angle (from vertical) and slant range
    follow from the sensor height, and with default bin widths each beam
    lands in its own perspective.  Response parameters draw uniformly from
    the given ranges in beam order, so the set is reproducible per seed.
    """
    if n_beams < 1:
        raise ValueError("n_beams must be at least 1")
    if not (radius_min > 0 and radius_max >= radius_min):
        raise ValueError("need 0 < radius_min <= radius_max")
    rng = np.random.default_rng(seed)
    beams = []
    for b in range(n_beams):
        frac = b / (n_beams - 1) if n_beams > 1 else 0.0
        radius = radius_min + frac * (radius_max - radius_min)
        incidence_deg = math.degrees(math.atan2(radius, sensor_height))
        slant_range = math.hypot(radius, sensor_height)
        key = PerspectiveKey.from_raw(b, incidence_deg, slant_range)
        beams.append(
            LaserModel(
                key=key,
                gain=float(rng.uniform(*gain_range)),
                offset=float(rng.uniform(*offset_range)),
                gamma_exp=float(rng.uniform(*gamma_range)),
                sigma=sigma,
                ground_radius=radius,
                sensor_height=sensor_height,
                incidence_deg=incidence_deg,
                range_m=slant_range,
            )
        )
    return tuple(beams)


def scan(scene: GroundScene, cfg: ScanConfig) -> MeasurementBatch:
    """Generate the measurement stream for one scan session.

    For every revolution each beam sweeps its ground ring around the
    interpolated vehicle position; each sample reads the truth at the hit
    cell, applies the beam response, adds seeded Gaussian noise and clamps to
    [0, 255].  Samples falling outside the scene are dropped and tallied.
    Identical configurations (including the seed) produce bit-identical
    streams.
    """
    spec = scene.truth.spec
    traj = cfg.trajectory
    extent_x = spec.origin[0] + spec.n_x * spec.cell_size
    extent_y = spec.origin[1] + spec.n_y * spec.cell_size
    inside_x = (traj[:, 1] >= spec.origin[0]) & (traj[:, 1] < extent_x)
    inside_y = (traj[:, 2] >= spec.origin[1]) & (traj[:, 2] < extent_y)
    if not (inside_x & inside_y).all():
        raise ValueError("trajectory waypoints must lie inside the scene")

    rng = np.random.default_rng(cfg.rng_seed)
    rps = cfg.revolutions_per_second
    ppr = cfg.points_per_revolution
    t0, t1 = traj[0, 0], traj[-1, 0]
    n_revs = max(1, int(math.floor((t1 - t0) * rps + 1e-9)))

    j = np.arange(ppr)
    azimuth = 2.0 * np.pi * j / ppr
    times = t0 + (np.arange(n_revs)[:, None] + j[None, :] / ppr).ravel() / rps
    vx = np.interp(times, traj[:, 0], traj[:, 1])
    vy = np.interp(times, traj[:, 0], traj[:, 2])
    cos_t = np.tile(np.cos(azimuth), n_revs)
    sin_t = np.tile(np.sin(azimuth), n_revs)

    parts_x, parts_y, parts_v = [], [], []
    parts_b, parts_i, parts_r = [], [], []
    dropped = 0
    for model in cfg.beams:
        hx = vx + model.ground_radius * cos_t
        hy = vy + model.ground_radius * sin_t
        row, col = spec.world_to_cell(hx, hy)
        inside = (row >= 0) & (row < spec.n_y) & (col >= 0) & (col < spec.n_x)
        dropped += int(np.count_nonzero(~inside))
        if not inside.any():
            continue
        truth_vals = scene.truth.values[row[inside], col[inside]]
        refl = model.response(truth_vals)
        if model.sigma > 0:
            refl = np.clip(refl + rng.normal(0.0, model.sigma, refl.shape), 0.0, 255.0)
        n = refl.size
        parts_x.append(hx[inside])
        parts_y.append(hy[inside])
        parts_v.append(refl)
        parts_b.append(np.full(n, model.key.beam, dtype=np.int64))
        parts_i.append(np.full(n, model.incidence_deg))
        parts_r.append(np.full(n, model.range_m))

    if not parts_x:
        empty = np.empty(0)
        return MeasurementBatch(
            empty, empty, empty, np.empty(0, dtype=np.int64), empty, empty, dropped=dropped
        )
    return MeasurementBatch(
        np.concatenate(parts_x),
        np.concatenate(parts_y),
        np.concatenate(parts_v),
        np.concatenate(parts_b),
        np.concatenate(parts_i),
        np.concatenate(parts_r),
        dropped=dropped,
    )


def kl_gaussian(samples, bins: int) -> float:
    """KL divergence (bits) of the sample histogram from a fitted Gaussian.

    P is the empirical histogram over ``bins`` equal-width bins spanning the
    sample range; Q integrates a Gaussian with the sample mean and standard
    deviation (ddof=1) over the same bins and renormalizes.  Returns
    ``sum P log2(P/Q)`` over bins with P > 0, with Q floored at 1e-12.  Small
    values mean the samples look Gaussian.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 30:
        raise ValueError(f"need at least 30 samples, got {samples.size}")
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    sd = float(samples.std(ddof=1))
    if sd == 0.0:
        raise ValueError("zero sample variance; the Gaussian reference is degenerate")
    mu = float(samples.mean())

    counts, edges = np.histogram(samples, bins=bins)
    p = counts / counts.sum()
    q = np.diff(norm.cdf(edges, loc=mu, scale=sd))
    q = q / q.sum()
    q = np.maximum(q, 1e-12)
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def radial_variance(
    cell_map: CellMap, center: tuple[float, float], bin_width: float = 0.5
) -> float:
    """Variance of ring means around ``center``; the ring-artifact statistic.

    Occupied cells are binned by distance to the center; the statistic is the
    population variance of the per-ring mean values.  Per-beam response
    differences show up as rings of distinct intensity, inflating this value,
    while scene structure largely averages out along each ring.  Apply it to
    a difference map (map minus truth) to isolate artifacts from content.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    rows, cols = np.nonzero(cell_map.occupied)
    if rows.size == 0:
        raise ValueError("map has no occupied cells")
    x, y = cell_map.spec.cell_center(rows, cols)
    dist = np.hypot(x - center[0], y - center[1])
    ring = np.floor(dist / bin_width).astype(np.int64)
    sums = np.bincount(ring, weights=cell_map.values[rows, cols])
    counts = np.bincount(ring)
    means = sums[counts > 0] / counts[counts > 0]
    if means.size < 2:
        raise ValueError("fewer than two occupied rings; statistic undefined")
    return float(np.var(means))
