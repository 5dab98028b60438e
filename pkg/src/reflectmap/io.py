"""On-disk interchange formats.

Cell maps travel as 8-bit binary PGM pairs (`<stem>.pgm` values,
`<stem>.mask.pgm` occupancy, 255 = occupied) with the grid geometry recorded
in a header comment.  Gradient fields use a small raw format: a 16-byte
header (magic "RGRD", n_x, n_y, reserved as little-endian uint32) followed by
the gx and gy planes as row-major float32, with the two validity masks as
sibling PGMs.  Everything tabular is plain CSV with a fixed header; floats
are printed with 17 significant digits so reading a file back reproduces the
exact values and re-running a pipeline reproduces byte-identical artifacts.
"""

from __future__ import annotations

import json
import math
import re
import struct
from pathlib import Path

import numpy as np

from .fusion import WeightVector
from .gradients import GradientField
from .grid import CellMap, GridSpec
from .perspectives import MeasurementBatch, PerspectiveKey
from .segment import MarkMask, SegmentationReport

MEASUREMENT_HEADER = "x_m,y_m,reflectivity,beam,incidence_deg,range_m"
WEIGHTS_HEADER = "beam,incidence_bin,range_bin,weight"
CONVERGENCE_HEADER = "iter,objective,rel_step"
REPORT_HEADER = "completeness,correctness,f_score,tp,fp,fn"
SCORES_HEADER = "dx_m,dy_m,heading_rad,score"
PROFILE_HEADER = "beam,gain,offset,gamma,sigma"

_GEOMETRY_RE = re.compile(r"cell_size=(\S+) origin=(\S+),(\S+)")


def _g(x: float) -> str:
    """Round-trip-exact float formatting."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# PGM


def _write_pgm(path: Path, data: np.ndarray, comment: str | None = None) -> None:
    h, w = data.shape
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{w} {h}\n255\n".encode("ascii")
    path.write_bytes(header + np.ascontiguousarray(data, dtype=np.uint8).tobytes())


def _read_pgm(path: Path) -> tuple[np.ndarray, list[str]]:
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary (P5) PGM file")
    comments: list[str] = []
    pos = 2
    tokens: list[bytes] = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ValueError(f"{path} has a truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            end = raw.index(b"\n", pos)
            comments.append(raw[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, got maxval {maxval}")
    pos += 1  # exactly one whitespace byte separates the header from the raster
    if len(raw) - pos < w * h:
        raise ValueError(f"{path} is truncated: expected {w * h} raster bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return data.copy(), comments


def _geometry_comment(spec: GridSpec) -> str:
    return f"cell_size={_g(spec.cell_size)} origin={_g(spec.origin[0])},{_g(spec.origin[1])}"


def _geometry_from_comments(comments: list[str]) -> tuple[float, tuple[float, float]] | None:
    for comment in comments:
        m = _GEOMETRY_RE.search(comment)
        if m:
            return float(m.group(1)), (float(m.group(2)), float(m.group(3)))
    return None


def _stem(path) -> Path:
    path = Path(path)
    name = path.name
    for suffix in (".mask.pgm", ".maskx.pgm", ".masky.pgm", ".pgm", ".rgrd"):
        if name.endswith(suffix):
            return path.with_name(name[: -len(suffix)])
    return path


def cell_map_paths(path) -> tuple[Path, Path]:
    """Value and mask file paths for a map stem (any of its names accepted)."""
    stem = _stem(path)
    return stem.with_name(stem.name + ".pgm"), stem.with_name(stem.name + ".mask.pgm")


def write_cell_map(path, cell_map: CellMap) -> tuple[Path, Path]:
    """Write the PGM pair; values round to 8 bits, unoccupied cells store 0."""
    values_path, mask_path = cell_map_paths(path)
    comment = _geometry_comment(cell_map.spec)
    quantized = np.where(
        cell_map.occupied, np.rint(np.clip(cell_map.values, 0.0, 255.0)), 0.0
    ).astype(np.uint8)
    _write_pgm(values_path, quantized, comment)
    _write_pgm(mask_path, np.where(cell_map.occupied, 255, 0).astype(np.uint8), comment)
    return values_path, mask_path


def read_cell_map(path) -> CellMap:
    """Read a PGM pair back into a map; grid geometry comes from the comment."""
    values_path, mask_path = cell_map_paths(path)
    data, comments = _read_pgm(values_path)
    mask, _ = _read_pgm(mask_path)
    if mask.shape != data.shape:
        raise ValueError(f"{mask_path} dimensions do not match {values_path}")
    geometry = _geometry_from_comments(comments)
    cell_size, origin = geometry if geometry else (1.0, (0.0, 0.0))
    spec = GridSpec(n_x=data.shape[1], n_y=data.shape[0], cell_size=cell_size, origin=origin)
    occupied = mask > 0
    return CellMap(spec, np.where(occupied, data.astype(np.float64), 0.0), occupied)


_THRESHOLD_RE = re.compile(r"threshold=(\S+)")


def write_mark_mask(path, mask: MarkMask) -> tuple[Path, Path]:
    """Write a marking mask as a PGM pair (255 = marked / occupied)."""
    marked_path, occ_path = cell_map_paths(path)
    comment = _geometry_comment(mask.spec)
    if mask.threshold is not None:
        comment += f" threshold={_g(mask.threshold)}"
    _write_pgm(marked_path, np.where(mask.marked, 255, 0).astype(np.uint8), comment)
    _write_pgm(occ_path, np.where(mask.occupied, 255, 0).astype(np.uint8), comment)
    return marked_path, occ_path


def read_mark_mask(path) -> MarkMask:
    marked_path, occ_path = cell_map_paths(path)
    marked, comments = _read_pgm(marked_path)
    occ, _ = _read_pgm(occ_path)
    if occ.shape != marked.shape:
        raise ValueError(f"{occ_path} dimensions do not match {marked_path}")
    geometry = _geometry_from_comments(comments)
    cell_size, origin = geometry if geometry else (1.0, (0.0, 0.0))
    spec = GridSpec(n_x=marked.shape[1], n_y=marked.shape[0], cell_size=cell_size, origin=origin)
    threshold = None
    for line in comments:
        m = _THRESHOLD_RE.search(line)
        if m:
            threshold = float(m.group(1))
    return MarkMask(spec, marked > 0, occ > 0, threshold)


# ---------------------------------------------------------------------------
# Gradient fields

_RGRD_MAGIC = b"RGRD"


def gradient_field_paths(path) -> tuple[Path, Path, Path]:
    stem = _stem(path)
    return (
        stem.with_name(stem.name + ".rgrd"),
        stem.with_name(stem.name + ".maskx.pgm"),
        stem.with_name(stem.name + ".masky.pgm"),
    )


def write_gradient_field(path, g: GradientField) -> tuple[Path, Path, Path]:
    """Write the raw gradient planes plus the two validity-mask PGMs."""
    data_path, maskx_path, masky_path = gradient_field_paths(path)
    spec = g.spec
    header = struct.pack("<4sIII", _RGRD_MAGIC, spec.n_x, spec.n_y, 0)
    gx = np.ascontiguousarray(g.gx, dtype="<f4")
    gy = np.ascontiguousarray(g.gy, dtype="<f4")
    data_path.write_bytes(header + gx.tobytes() + gy.tobytes())
    comment = _geometry_comment(spec)
    _write_pgm(maskx_path, np.where(g.valid_x, 255, 0).astype(np.uint8), comment)
    _write_pgm(masky_path, np.where(g.valid_y, 255, 0).astype(np.uint8), comment)
    return data_path, maskx_path, masky_path


def read_gradient_field(path) -> GradientField:
    data_path, maskx_path, masky_path = gradient_field_paths(path)
    raw = data_path.read_bytes()
    if len(raw) < 16 or raw[:4] != _RGRD_MAGIC:
        raise ValueError(f"{data_path} is not a gradient-field file")
    _, n_x, n_y, _ = struct.unpack("<4sIII", raw[:16])
    plane = n_x * n_y
    if len(raw) != 16 + 2 * plane * 4:
        raise ValueError(f"{data_path} has wrong size for a {n_x}x{n_y} field")
    gx = np.frombuffer(raw, dtype="<f4", count=plane, offset=16).reshape(n_y, n_x)
    gy = np.frombuffer(raw, dtype="<f4", count=plane, offset=16 + plane * 4).reshape(n_y, n_x)
    maskx, comments = _read_pgm(maskx_path)
    masky, _ = _read_pgm(masky_path)
    geometry = _geometry_from_comments(comments)
    cell_size, origin = geometry if geometry else (1.0, (0.0, 0.0))
    spec = GridSpec(n_x=int(n_x), n_y=int(n_y), cell_size=cell_size, origin=origin)
    return GradientField(
        spec,
        gx.astype(np.float64),
        gy.astype(np.float64),
        maskx > 0,
        masky > 0,
    )


# ---------------------------------------------------------------------------
# CSV


def write_measurements(path, batch: MeasurementBatch) -> None:
    lines = [MEASUREMENT_HEADER]
    for i in range(len(batch)):
        lines.append(
            f"{_g(batch.x[i])},{_g(batch.y[i])},{_g(batch.reflectivity[i])},"
            f"{int(batch.beam[i])},{_g(batch.incidence_deg[i])},{_g(batch.range_m[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_measurements(path) -> MeasurementBatch:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if header != MEASUREMENT_HEADER:
            raise ValueError(
                f"{path}: expected header {MEASUREMENT_HEADER!r}, got {header!r}"
            )
        cols: list[list[float]] = [[], [], [], [], [], []]
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in row):
                raise ValueError(f"{path}:{lineno}: non-finite measurement field")
            for col, v in zip(cols, row):
                col.append(v)
    return MeasurementBatch(
        cols[0], cols[1], cols[2], np.asarray(cols[3], dtype=np.int64), cols[4], cols[5]
    )


def write_weights(path, weights: WeightVector) -> None:
    lines = [WEIGHTS_HEADER]
    for key, w in zip(weights.keys, weights.weights):
        lines.append(f"{key.beam},{key.incidence_bin},{key.range_bin},{_g(w)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_weights(path) -> WeightVector:
    path = Path(path)
    entries: dict[PerspectiveKey, float] = {}
    with path.open() as fh:
        header = fh.readline().strip()
        if header != WEIGHTS_HEADER:
            raise ValueError(f"{path}: expected header {WEIGHTS_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            key = PerspectiveKey(int(parts[0]), int(parts[1]), int(parts[2]))
            if key in entries:
                raise ValueError(f"{path}:{lineno}: duplicate perspective {key}")
            entries[key] = float(parts[3])
    keys = tuple(sorted(entries))
    return WeightVector(keys, np.array([entries[k] for k in keys]))


def write_convergence(path, history) -> None:
    lines = [CONVERGENCE_HEADER]
    for it, objective, rel_step in history:
        lines.append(f"{int(it)},{_g(objective)},{_g(rel_step)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(path, report: SegmentationReport) -> None:
    Path(path).write_text(
        REPORT_HEADER + "\n"
        f"{_g(report.completeness)},{_g(report.correctness)},{_g(report.f_score)},"
        f"{report.tp},{report.fp},{report.fn}\n"
    )


def write_scores(path, scores) -> None:
    lines = [SCORES_HEADER]
    for dx, dy, heading, score in scores:
        lines.append(f"{_g(dx)},{_g(dy)},{_g(heading)},{_g(score)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores(path):
    path = Path(path)
    rows = []
    with path.open() as fh:
        header = fh.readline().strip()
        if header != SCORES_HEADER:
            raise ValueError(f"{path}: expected header {SCORES_HEADER!r}, got {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            dx, dy, heading, score = (float(p) for p in line.split(","))
            rows.append((dx, dy, heading, score))
    return rows


def write_laser_profile(path, beams) -> None:
    """Per-beam response table (geometry is not stored; see read_laser_profile)."""
    lines = [PROFILE_HEADER]
    for model in beams:
        lines.append(
            f"{model.key.beam},{_g(model.gain)},{_g(model.offset)},"
            f"{_g(model.gamma_exp)},{_g(model.sigma)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_laser_profile(
    path,
    sensor_height: float = 2.0,
    radius_min: float = 2.0,
    radius_max: float = 12.0,
):
    """Read a response table and rebuild beams with default ring geometry.

    Ring radii spread evenly over [radius_min, radius_max] by beam index, the
    same convention as the simulator's default beam factory.
    """
    from .simulate import LaserModel

    path = Path(path)
    rows = []
    with path.open() as fh:
        header = fh.readline().strip()
        if header != PROFILE_HEADER:
            raise ValueError(f"{path}: expected header {PROFILE_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            rows.append(
                (int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]))
            )
    if not rows:
        raise ValueError(f"{path} lists no beams")
    rows.sort()
    n = max(r[0] for r in rows) + 1
    beams = []
    for beam, gain, offset, gamma_exp, sigma in rows:
        frac = beam / (n - 1) if n > 1 else 0.0
        radius = radius_min + frac * (radius_max - radius_min)
        incidence_deg = math.degrees(math.atan2(radius, sensor_height))
        slant = math.hypot(radius, sensor_height)
        beams.append(
            LaserModel(
                key=PerspectiveKey.from_raw(beam, incidence_deg, slant),
                gain=gain,
                offset=offset,
                gamma_exp=gamma_exp,
                sigma=sigma,
                ground_radius=radius,
                sensor_height=sensor_height,
                incidence_deg=incidence_deg,
                range_m=slant,
            )
        )
    return tuple(beams)


# ---------------------------------------------------------------------------
# JSON


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
