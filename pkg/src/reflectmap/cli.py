"""Command line interface.

Subcommands cover the workflow end to end: ``simulate`` measurements,
``perspectives`` per-laser maps, ``fuse`` gradients, ``reconstruct`` a map,
``localize`` against a prior, ``segment`` markings, ``eval`` a mask,
``pipeline`` for a whole run and ``figures`` for its summary images.

Verbosity comes from the ``REFLECTMAP_LOG`` environment variable (``error``,
``warn``, ``info`` or ``debug``).  A missing input file exits with status 2
and the offending path on standard error; a failed pipeline stage exits
nonzero with the stage named.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .fusion import (
    FusionConfig,
    WeightVector,
    clamp_step,
    fuse,
    perspective_gradients,
    select_weights,
)
from .grid import GridSpec, OccupancySet
from .localize import SearchWindow, register
from .perspectives import (
    DEFAULT_INCIDENCE_BIN_DEG,
    DEFAULT_RANGE_BIN_M,
    build_perspectives,
    naive_map,
)
from .pipeline import MODES, PipelineConfig, StageFailure, run_pipeline
from .reconstruct import ReconstructionConfig, boundary_set, poisson_reconstruct
from .segment import extract_markings, evaluate
from .simulate import (
    SCENE_RECIPES,
    ScanConfig,
    SceneRecipe,
    default_beams,
    make_scene,
    scan,
    straight_trajectory,
)

log = logging.getLogger(__name__)

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    name = os.environ.get("REFLECTMAP_LOG", "warn").strip().lower()
    logging.basicConfig(
        level=_LOG_LEVELS.get(name, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ---------------------------------------------------------------------------
# Argument helpers


def _pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return float(parts[0]), float(parts[1])


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "input file not found", str(path))
    return path


def _read_map(path):
    for p in io.cell_map_paths(path):
        _require(p)
    return io.read_cell_map(path)


def _read_gradient(path):
    for p in io.gradient_field_paths(path):
        _require(p)
    return io.read_gradient_field(path)


def _read_mask(path):
    for p in io.cell_map_paths(path):
        _require(p)
    return io.read_mark_mask(path)


def _add_grid_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--nx", type=int, default=400, help="grid columns (default 400)")
    parser.add_argument("--ny", type=int, default=400, help="grid rows (default 400)")
    parser.add_argument(
        "--cell-size", type=float, default=0.1, help="cell edge length in metres (default 0.1)"
    )
    parser.add_argument(
        "--origin", type=_pair, default=(0.0, 0.0), metavar="X,Y",
        help="world position of the grid corner (default 0,0)",
    )


def _grid(args) -> GridSpec:
    return GridSpec(n_x=args.nx, n_y=args.ny, cell_size=args.cell_size, origin=args.origin)


def _add_bin_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--incidence-bin", type=float, default=DEFAULT_INCIDENCE_BIN_DEG,
        help="incidence-angle bin width in degrees",
    )
    parser.add_argument(
        "--range-bin", type=float, default=DEFAULT_RANGE_BIN_M,
        help="range bin width in metres",
    )


_WINDOW_KEYS = ("dx", "dy", "h")


def _kv_floats(text: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"expected key=value, got {part!r}")
        key, value = part.split("=", 1)
        key = key.strip()
        if key not in _WINDOW_KEYS:
            raise argparse.ArgumentTypeError(
                f"unknown key {key!r}; allowed: {', '.join(_WINDOW_KEYS)}"
            )
        try:
            out[key] = float(value)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad value in {part!r}") from exc
    return out


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_simulate(args) -> int:
    spec = _grid(args)
    recipe = SceneRecipe(
        name=args.recipe,
        asphalt=args.asphalt,
        paint=args.paint,
        stripe_width=args.stripe_width,
        spacing=args.spacing,
        tile=args.tile,
    )
    scene = make_scene(spec, recipe)
    if args.profile:
        beams = io.read_laser_profile(_require(args.profile), sensor_height=args.sensor_height)
    else:
        beams = default_beams(
            n_beams=args.beams,
            sensor_height=args.sensor_height,
            radius_min=args.radius_min,
            radius_max=args.radius_max,
            gain_range=args.gain_range,
            offset_range=args.offset_range,
            gamma_range=args.gamma_range,
            sigma=args.sigma,
            seed=args.seed,
        )

    # Drive along the horizontal midline, keeping the scan rings inside the
    # scene where the extent allows it; tiny scenes fall back to standing
    # still at the center.
    ox, oy = spec.origin
    extent_x = spec.n_x * spec.cell_size
    extent_y = spec.n_y * spec.cell_size
    mid_y = oy + extent_y / 2.0
    margin = min(args.radius_max, extent_x / 2.0 - spec.cell_size / 4.0)
    margin = max(margin, spec.cell_size / 4.0)
    duration = args.revs / args.rps
    x0, x1 = ox + margin, ox + extent_x - margin
    if x1 <= x0 or duration <= 0:
        trajectory = straight_trajectory((ox + extent_x / 2.0, mid_y), 0.0, 0.0, duration)
    else:
        trajectory = straight_trajectory((x0, mid_y), 0.0, (x1 - x0) / duration, duration)

    cfg = ScanConfig(
        trajectory=trajectory,
        beams=beams,
        revolutions_per_second=args.rps,
        points_per_revolution=args.ppr,
        rng_seed=args.seed,
    )
    batch = scan(scene, cfg)
    io.write_measurements(args.out, batch)
    if args.truth_out:
        io.write_cell_map(args.truth_out, scene.truth)
    if args.marks_out:
        from .segment import MarkMask

        occupied = scene.truth.occupied
        io.write_mark_mask(args.marks_out, MarkMask(spec, scene.feature_mask, occupied))
    if args.profile_out:
        io.write_laser_profile(args.profile_out, beams)
    print(f"wrote {len(batch)} measurements ({batch.dropped} outside the scene) to {args.out}")
    return 0


def _cmd_perspectives(args) -> int:
    batch = io.read_measurements(_require(args.measurements))
    spec = _grid(args)
    pset = build_perspectives(batch, spec, args.incidence_bin, args.range_bin)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for key in pset.keys():
        stem = f"perspective_b{key.beam:03d}_i{key.incidence_bin:03d}_r{key.range_bin:03d}"
        io.write_cell_map(out_dir / stem, pset[key].cell_map)
    if args.naive_out:
        io.write_cell_map(args.naive_out, naive_map(batch, spec))
    print(f"wrote {len(pset)} perspective maps to {out_dir} ({pset.dropped} measurements dropped)")
    return 0


def _cmd_fuse(args) -> int:
    batch = io.read_measurements(_require(args.measurements))
    spec = _grid(args)
    pset = build_perspectives(batch, spec, args.incidence_bin, args.range_bin)
    grads = perspective_gradients(pset)
    cfg = FusionConfig(
        lam=args.lam,
        gamma=args.gamma,
        tau=args.tau,
        max_iters=args.max_iters,
        denoise=args.denoise,
        denoise_tau=args.tau,
        denoise_gamma=args.gamma,
        denoise_max_iters=args.max_iters,
    )
    if args.uniform:
        weights = WeightVector.uniform(grads.keys())
    else:
        weights = select_weights(grads, clamp_step(cfg, grads))
    fused = fuse(grads, weights, cfg)
    io.write_gradient_field(args.out, fused)
    if args.weights_out:
        io.write_weights(args.weights_out, weights)
    print(
        f"fused {len(grads)} perspectives into {args.out} "
        f"({weights.n_nonzero}/{len(weights.keys)} nonzero weights)"
    )
    return 0


def _cmd_reconstruct(args) -> int:
    g = _read_gradient(args.gradient)
    reference = _read_map(args.reference)
    bc = boundary_set(reference, bin_width=args.boundary_bin_width)

    # The gradient file carries no occupancy of its own: solve over every
    # cell incident to a valid gradient edge, plus the reference cells.
    occ = reference.occupied.copy()
    occ |= g.valid_x
    occ[:, 1:] |= g.valid_x[:, :-1]
    occ |= g.valid_y
    occ[1:, :] |= g.valid_y[:-1, :]
    omega = OccupancySet.from_mask(occ)

    cfg = ReconstructionConfig(gamma=args.gamma, max_iters=args.max_iters, rel_tol=args.rel_tol)
    recon, info = poisson_reconstruct(g, bc, omega, cfg, return_info=True)
    io.write_cell_map(args.out, recon)
    convergence_out = args.convergence_out
    if convergence_out is None:
        values_path = io.cell_map_paths(args.out)[0]
        convergence_out = values_path.with_name(values_path.name[:-4] + ".convergence.csv")
    io.write_convergence(convergence_out, info["history"])
    print(
        f"reconstructed {info['free_cells']} cells in {info['iterations']} iterations "
        f"(relative step {info['rel_step']:.3g}, converged={info['converged']})"
    )
    return 0


def _cmd_localize(args) -> int:
    prior = _read_map(args.prior)
    local = _read_map(args.local)
    window_in = _kv_floats(args.window) if args.window else {}
    steps_in = _kv_floats(args.steps) if args.steps else {}
    defaults = SearchWindow()
    window = SearchWindow(
        dx_range=window_in.get("dx", defaults.dx_range),
        dy_range=window_in.get("dy", defaults.dy_range),
        heading_range=window_in.get("h", defaults.heading_range),
        dx_step=steps_in.get("dx", defaults.dx_step),
        dy_step=steps_in.get("dy", defaults.dy_step),
        heading_step=steps_in.get("h", defaults.heading_step),
    )
    result = register(prior, local, window, bins=args.bins, return_scores=bool(args.scores_out))
    if args.scores_out:
        io.write_scores(args.scores_out, result.scores)
    pose = result.pose
    print(f"dx={pose.dx:.6g} dy={pose.dy:.6g} heading={pose.heading:.6g} score={result.score:.6g}")
    return 0


def _cmd_segment(args) -> int:
    cell_map = _read_map(args.map)
    mask = extract_markings(cell_map, method=args.method, threshold=args.threshold)
    io.write_mark_mask(args.out, mask)
    threshold = "none" if mask.threshold is None else f"{mask.threshold:g}"
    print(f"marked {mask.n_marked} cells (threshold {threshold}) -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    mask = _read_mask(args.mask)
    truth = _read_mask(args.truth)
    report = evaluate(mask, truth)
    io.write_report(args.report, report)
    print(
        f"completeness={report.completeness:.4f} correctness={report.correctness:.4f} "
        f"f_score={report.f_score:.4f}"
    )
    return 0


_CONFIG_KEYS = {
    "mode", "seed", "jobs", "nx", "ny", "cell_size", "origin_x", "origin_y",
    "incidence_bin", "range_bin", "boundary_bin_width",
    "lambda", "gamma", "tau", "max_iters",
    "recon_gamma", "recon_max_iters", "rel_tol",
}


def _load_config_file(path: Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        entries[key] = value.strip()
    return entries


def _cmd_pipeline(args) -> int:
    entries = _load_config_file(_require(args.config)) if args.config else {}

    def pick(flag_value, key, default, cast):
        """Flag beats config file beats default."""
        if flag_value is not None:
            return flag_value
        if key in entries:
            return cast(entries[key])
        return default

    mode = pick(args.mode, "mode", "select", str)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose one of {', '.join(MODES)}")
    seed = pick(args.seed, "seed", None, int)
    grid = GridSpec(
        n_x=pick(args.nx, "nx", 400, int),
        n_y=pick(args.ny, "ny", 400, int),
        cell_size=pick(args.cell_size, "cell_size", 0.1, float),
        origin=(
            pick(None, "origin_x", 0.0, float),
            pick(None, "origin_y", 0.0, float),
        ),
    )
    fusion = FusionConfig(
        lam=pick(args.lam, "lambda", 1.2e-3, float),
        gamma=pick(args.gamma, "gamma", 1e-3, float),
        tau=pick(args.tau, "tau", 2.3e-3, float),
        max_iters=pick(args.max_iters, "max_iters", 100, int),
        denoise_tau=pick(args.tau, "tau", 2.3e-3, float),
        denoise_gamma=pick(args.gamma, "gamma", 1e-3, float),
        denoise_max_iters=pick(args.max_iters, "max_iters", 100, int),
    )
    reconstruction = ReconstructionConfig(
        gamma=pick(args.recon_gamma, "recon_gamma", 0.125, float),
        max_iters=pick(args.recon_max_iters, "recon_max_iters", 256, int),
        rel_tol=pick(args.rel_tol, "rel_tol", 1e-3, float),
    )
    config = PipelineConfig(
        measurements=args.measurements,
        out_dir=args.out_dir,
        grid=grid,
        fusion=fusion,
        reconstruction=reconstruction,
        incidence_bin_deg=pick(args.incidence_bin, "incidence_bin", DEFAULT_INCIDENCE_BIN_DEG, float),
        range_bin_m=pick(args.range_bin, "range_bin", DEFAULT_RANGE_BIN_M, float),
        boundary_bin_width=pick(args.boundary_bin_width, "boundary_bin_width", 1.0, float),
        seed=seed,
        jobs=pick(args.jobs, "jobs", 1, int),
    )
    manifest = run_pipeline(config, mode)
    stages = ", ".join(manifest["timings_s"].keys())
    print(f"run complete: mode={mode} stages=[{stages}] -> {config.out_dir}")
    return 0


def _cmd_figures(args) -> int:
    from .figures import emit_figures

    written = emit_figures(args.run_dir, args.out_dir)
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reflectmap",
        description="Ground-reflectivity mapping from laser scanner measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic measurements for a scene")
    p.add_argument("--recipe", choices=SCENE_RECIPES, default="lanes")
    p.add_argument("--out", required=True, help="measurement CSV to write")
    p.add_argument("--truth-out", help="write the ground-truth map under this stem")
    p.add_argument("--marks-out", help="write the true marking mask under this stem")
    p.add_argument("--profile", help="laser response profile CSV to load")
    p.add_argument("--profile-out", help="write the generated laser profile CSV")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--beams", type=int, default=64)
    p.add_argument("--revs", type=int, default=20, help="number of scanner revolutions")
    p.add_argument("--rps", type=float, default=10.0, help="revolutions per second")
    p.add_argument("--ppr", type=int, default=180, help="points per revolution per beam")
    p.add_argument("--sensor-height", type=float, default=2.0)
    p.add_argument("--radius-min", type=float, default=2.0)
    p.add_argument("--radius-max", type=float, default=12.0)
    p.add_argument("--gain-range", type=_pair, default=(1.0, 1.0), metavar="LO,HI")
    p.add_argument("--offset-range", type=_pair, default=(0.0, 0.0), metavar="LO,HI")
    p.add_argument("--gamma-range", type=_pair, default=(1.0, 1.0), metavar="LO,HI")
    p.add_argument("--sigma", type=float, default=0.0, help="additive noise level")
    p.add_argument("--asphalt", type=float, default=25.0)
    p.add_argument("--paint", type=float, default=120.0)
    p.add_argument("--stripe-width", type=float, default=0.1)
    p.add_argument("--spacing", type=float, default=3.5)
    p.add_argument("--tile", type=float, default=1.0)
    _add_grid_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("perspectives", help="bin measurements into per-laser maps")
    p.add_argument("--measurements", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--naive-out", help="also write the per-cell mean map under this stem")
    _add_grid_flags(p)
    _add_bin_flags(p)
    p.set_defaults(func=_cmd_perspectives)

    p = sub.add_parser("fuse", help="select weights and fuse perspective gradients")
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True, help="fused gradient stem (.rgrd)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.2e-3)
    p.add_argument("--gamma", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=2.3e-3)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--denoise", action="store_true", help="soft-threshold the gradients")
    p.add_argument("--uniform", action="store_true", help="skip selection, weight all equally")
    p.add_argument("--weights-out", help="write the selected weights CSV")
    _add_grid_flags(p)
    _add_bin_flags(p)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("reconstruct", help="integrate a gradient field into a map")
    p.add_argument("--gradient", required=True, help="fused gradient stem (.rgrd)")
    p.add_argument("--reference", required=True, help="reference map stem providing the border")
    p.add_argument("--out", required=True, help="reconstructed map stem")
    p.add_argument("--gamma", type=float, default=0.125)
    p.add_argument("--max-iters", type=int, default=256)
    p.add_argument("--rel-tol", type=float, default=1e-3)
    p.add_argument("--boundary-bin-width", type=float, default=1.0)
    p.add_argument("--convergence-out", help="convergence CSV (default <out>.convergence.csv)")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("localize", help="register a local map against a prior")
    p.add_argument("--prior", required=True)
    p.add_argument("--local", required=True)
    p.add_argument("--window", metavar="dx=1.0,dy=1.0,h=0.03", help="search half-widths")
    p.add_argument("--steps", metavar="dx=0.1,dy=0.1,h=0.005", help="search step sizes")
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--scores-out", help="write every candidate score to this CSV")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("segment", help="extract road markings from a map")
    p.add_argument("--map", required=True)
    p.add_argument("--method", choices=("otsu", "fixed"), default="otsu")
    p.add_argument("--threshold", type=float, help="threshold for --method fixed")
    p.add_argument("--out", required=True, help="marking mask stem")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("eval", help="score a marking mask against ground truth")
    p.add_argument("--mask", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True, help="report CSV to write")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="run measurements through fusion and reconstruction")
    p.add_argument("--measurements", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--config", help="key = value file; explicit flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="recorded in the manifest; execution is sequential")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--cell-size", type=float)
    p.add_argument("--incidence-bin", type=float)
    p.add_argument("--range-bin", type=float)
    p.add_argument("--boundary-bin-width", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--recon-gamma", type=float)
    p.add_argument("--recon-max-iters", type=int)
    p.add_argument("--rel-tol", type=float)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("figures", help="render summary images for a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", help="defaults to the run directory")
    p.set_defaults(func=_cmd_figures)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        missing = getattr(exc, "filename", None) or exc
        print(f"error: input not found: {missing}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
