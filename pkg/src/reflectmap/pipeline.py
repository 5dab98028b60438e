"""End-to-end run orchestration: measurements file in, map artifacts out.

A run executes load, perspectives, naive baseline, fusion and reconstruction
stages into one output directory.  Every artifact is first written under a
``.partial`` name and renamed when its stage completes, so an interrupted or
failed run never leaves a final-looking but incomplete file; whatever is
still ``.partial`` marks the failed stage.  A ``run_manifest.json`` records
the mode, all parameters, the seed and per-stage timings.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field
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
from .grid import GridSpec
from .perspectives import (
    DEFAULT_INCIDENCE_BIN_DEG,
    DEFAULT_RANGE_BIN_M,
    build_perspectives,
    naive_map,
    union_occupancy,
)
from .reconstruct import ReconstructionConfig, poisson_reconstruct, reference_boundary
from .validation import check_positive

log = logging.getLogger(__name__)

MODES = ("naive", "uniform", "select", "select+denoise")


class StageFailure(RuntimeError):
    """A pipeline stage raised; the stage name travels with the error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs besides the mode."""

    measurements: Path
    out_dir: Path
    grid: GridSpec = GridSpec(n_x=400, n_y=400, cell_size=0.1)
    fusion: FusionConfig = FusionConfig()
    reconstruction: ReconstructionConfig = ReconstructionConfig()
    incidence_bin_deg: float = DEFAULT_INCIDENCE_BIN_DEG
    range_bin_m: float = DEFAULT_RANGE_BIN_M
    boundary_bin_width: float = 1.0
    seed: int | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "measurements", Path(self.measurements))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        check_positive(
            incidence_bin_deg=self.incidence_bin_deg,
            range_bin_m=self.range_bin_m,
            boundary_bin_width=self.boundary_bin_width,
            jobs=self.jobs,
        )


class _Stage:
    """Collects artifact writes and renames them into place on commit."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self._renames: list[tuple[Path, Path]] = []

    def partial(self, stem: str) -> Path:
        """Partial path for a logical artifact name (suffixes appended by writers)."""
        return self.out_dir / f"{stem}.partial"

    def record(self, paths) -> None:
        if isinstance(paths, (str, Path)):
            paths = [paths]
        for p in paths:
            p = Path(p)
            final = p.with_name(p.name.replace(".partial.", ".", 1))
            self._renames.append((p, final))

    def commit(self) -> list[Path]:
        finals = []
        for partial, final in self._renames:
            os.replace(partial, final)
            finals.append(final)
        return finals


def run_pipeline(config: PipelineConfig, mode: str) -> dict:
    """Execute one run and return the manifest (also written to disk).

    ``naive`` averages the raw measurements per cell and stops there; the
    other modes fuse perspective gradients (uniform weights, sparse
    selection, or selection plus denoising) and reconstruct the map from the
    fused field.  Any stage error is re-raised as :class:`StageFailure` with
    partially written artifacts left under their ``.partial`` names.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose one of {', '.join(MODES)}")
    if not config.measurements.exists():
        raise FileNotFoundError(2, "input file not found", str(config.measurements))
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    fusion_cfg = dataclasses.replace(config.fusion, denoise=(mode == "select+denoise"))
    manifest: dict = {
        "mode": mode,
        "seed": config.seed,
        "jobs": config.jobs,
        "grid": {
            "n_x": config.grid.n_x,
            "n_y": config.grid.n_y,
            "cell_size": config.grid.cell_size,
            "origin": list(config.grid.origin),
        },
        "bins": {
            "incidence_deg": config.incidence_bin_deg,
            "range_m": config.range_bin_m,
        },
        "fusion": dataclasses.asdict(fusion_cfg),
        "reconstruction": dataclasses.asdict(config.reconstruction),
        "boundary_bin_width": config.boundary_bin_width,
        "measurements": {"path": str(config.measurements)},
        "artifacts": {},
    }
    timings: dict[str, float] = {}
    state: dict = {}

    def run_stage(name: str, fn) -> None:
        stage = _Stage(out_dir)
        start = time.perf_counter()
        try:
            fn(stage)
        except Exception as exc:
            raise StageFailure(name, exc) from exc
        finals = stage.commit()
        timings[name] = time.perf_counter() - start
        if finals:
            manifest["artifacts"][name] = [p.name for p in finals]

    def stage_load(stage: _Stage) -> None:
        batch = io.read_measurements(config.measurements)
        state["batch"] = batch
        manifest["measurements"].update(count=len(batch), dropped=batch.dropped)

    def stage_perspectives(stage: _Stage) -> None:
        pset = build_perspectives(
            state["batch"], config.grid, config.incidence_bin_deg, config.range_bin_m
        )
        state["pset"] = pset
        manifest["perspectives"] = {"count": len(pset), "dropped": pset.dropped}
        pdir = out_dir / "perspectives"
        pdir.mkdir(exist_ok=True)
        for key in pset.keys():
            stem = f"perspective_b{key.beam:03d}_i{key.incidence_bin:03d}_r{key.range_bin:03d}"
            paths = io.write_cell_map(pdir / f"{stem}.partial", pset[key].cell_map)
            stage.record(paths)

    def stage_naive(stage: _Stage) -> None:
        nmap = naive_map(state["batch"], config.grid)
        state["naive"] = nmap
        stage.record(io.write_cell_map(stage.partial("naive"), nmap))
        if mode == "naive":
            stage.record(io.write_cell_map(stage.partial("map"), nmap))

    def stage_fuse(stage: _Stage) -> None:
        pset = state["pset"]
        grads = perspective_gradients(pset)
        if mode == "uniform":
            weights = WeightVector.uniform(grads.keys())
            manifest["weights"] = {"mode": "uniform"}
        else:
            cfg = clamp_step(fusion_cfg, grads)
            weights, info = select_weights(grads, cfg, return_info=True)
            manifest["weights"] = {
                "mode": "select",
                "step_gamma": cfg.gamma,
                "iterations": info["iterations"],
                "objective": info["objective"],
            }
        manifest["weights"].update(nonzero=weights.n_nonzero, total=len(weights.keys))
        state["fused"] = fuse(grads, weights, fusion_cfg)
        stage.record(io.write_gradient_field(stage.partial("fused"), state["fused"]))
        wpath = out_dir / "weights.partial.csv"
        io.write_weights(wpath, weights)
        stage.record(wpath)

    def stage_reconstruct(stage: _Stage) -> None:
        pset = state["pset"]
        bc = reference_boundary(pset, bin_width=config.boundary_bin_width)
        omega = union_occupancy(pset)
        recon, info = poisson_reconstruct(
            state["fused"], bc, omega, config.reconstruction, return_info=True
        )
        manifest["reconstruction_result"] = {
            "reference_key": [bc.reference_key.beam, bc.reference_key.incidence_bin,
                              bc.reference_key.range_bin] if bc.reference_key else None,
            **{k: v for k, v in info.items() if k != "history"},
        }
        stage.record(io.write_cell_map(stage.partial("map"), recon))
        cpath = out_dir / "convergence.partial.csv"
        io.write_convergence(cpath, info["history"])
        stage.record(cpath)

    run_stage("load", stage_load)
    run_stage("perspectives", stage_perspectives)
    run_stage("naive", stage_naive)
    if mode != "naive":
        run_stage("fuse", stage_fuse)
        run_stage("reconstruct", stage_reconstruct)

    manifest["timings_s"] = {k: round(v, 6) for k, v in timings.items()}
    io.write_json(out_dir / "run_manifest.json", manifest)
    return manifest
