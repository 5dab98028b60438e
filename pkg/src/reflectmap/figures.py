"""Render summary images from the artifacts of a finished run directory.

Each figure is produced independently from whichever files exist: the map
comparison from ``naive`` / ``map``, the convergence curve from
``convergence.csv``, the weight profile from ``weights.csv`` and the
localization score surface from ``scores.csv``.  Missing inputs skip their
figure with a warning; a directory yielding no figure at all is an error.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import io

log = logging.getLogger(__name__)


def _fig_maps(run_dir: Path, out_dir: Path) -> Path | None:
    stems = [("naive", "naive mean"), ("map", "reconstructed")]
    maps = []
    for stem, title in stems:
        if not (run_dir / f"{stem}.pgm").exists():
            return None
        maps.append((io.read_cell_map(run_dir / f"{stem}.pgm"), title))
    fig, axes = plt.subplots(1, len(maps), figsize=(5 * len(maps), 5))
    for ax, (cell_map, title) in zip(np.atleast_1d(axes), maps):
        shown = np.where(cell_map.occupied, cell_map.values, np.nan)
        ax.imshow(shown, cmap="gray", vmin=0.0, vmax=255.0, origin="lower")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    out = out_dir / "maps.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _fig_convergence(run_dir: Path, out_dir: Path) -> Path | None:
    path = run_dir / "convergence.csv"
    if not path.exists():
        return None
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.size == 0:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(rows[:, 0], np.maximum(rows[:, 1], 1e-300), label="objective")
    ax.semilogy(rows[:, 0], np.maximum(rows[:, 2], 1e-300), label="relative step")
    ax.set_xlabel("iteration")
    ax.legend()
    ax.set_title("reconstruction convergence")
    fig.tight_layout()
    out = out_dir / "convergence.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _fig_weights(run_dir: Path, out_dir: Path) -> Path | None:
    path = run_dir / "weights.csv"
    if not path.exists():
        return None
    weights = io.read_weights(path)
    values = np.asarray(weights.weights)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(values.size), values, width=0.9)
    ax.set_xlabel("perspective (canonical order)")
    ax.set_ylabel("weight")
    ax.set_title(f"selected weights ({weights.n_nonzero}/{values.size} nonzero)")
    fig.tight_layout()
    out = out_dir / "weights.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _fig_scores(run_dir: Path, out_dir: Path) -> Path | None:
    path = run_dir / "scores.csv"
    if not path.exists():
        return None
    rows = io.read_scores(path)
    if not rows:
        return None
    data = np.asarray(rows, dtype=np.float64)  # columns dx, dy, h, score
    best_h = data[np.argmax(data[:, 3]), 2]
    sel = data[data[:, 2] == best_h]
    dxs = np.unique(sel[:, 0])
    dys = np.unique(sel[:, 1])
    surface = np.full((dys.size, dxs.size), np.nan)
    ix = np.searchsorted(dxs, sel[:, 0])
    iy = np.searchsorted(dys, sel[:, 1])
    surface[iy, ix] = sel[:, 3]
    fig, ax = plt.subplots(figsize=(6, 5))
    extent = (dxs[0], dxs[-1], dys[0], dys[-1]) if dxs.size > 1 and dys.size > 1 else None
    im = ax.imshow(surface, origin="lower", extent=extent, aspect="auto", cmap="viridis")
    fig.colorbar(im, ax=ax, label="normalized mutual information")
    ax.set_xlabel("dx [m]")
    ax.set_ylabel("dy [m]")
    ax.set_title(f"score surface at heading {best_h:g} rad")
    fig.tight_layout()
    out = out_dir / "scores.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def emit_figures(run_dir, out_dir=None) -> list[Path]:
    """Write every renderable figure for ``run_dir``; return the paths.

    Raises FileNotFoundError when the directory does not exist and
    RuntimeError when it contains nothing any figure can be built from.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(2, "run directory not found", str(run_dir))
    out_dir = run_dir if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    jobs = [
        ("map comparison", _fig_maps),
        ("convergence curve", _fig_convergence),
        ("weight profile", _fig_weights),
        ("score surface", _fig_scores),
    ]
    for name, fn in jobs:
        out = fn(run_dir, out_dir)
        if out is None:
            log.warning("skipping %s figure: inputs missing in %s", name, run_dir)
        else:
            written.append(out)
    if not written:
        raise RuntimeError(f"no figure inputs found in {run_dir}")
    return written
