"""Small input-validation helpers shared across modules."""

from __future__ import annotations

import numpy as np

from .grid import CellMap, GridSpec


def check_same_spec(*objs) -> GridSpec:
    """All arguments must share one GridSpec; returns it."""
    specs = [o.spec for o in objs]
    first = specs[0]
    for s in specs[1:]:
        if s != first:
            raise ValueError(f"grid specs differ: {first} vs {s}")
    return first


def check_positive(**named):
    for name, value in named.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def check_finite(arr, name: str):
    arr = np.asarray(arr)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_occupied_map(cell_map: CellMap, name: str = "map") -> CellMap:
    if cell_map.n_occupied == 0:
        raise ValueError(f"{name} has no occupied cells")
    return cell_map


def check_type(obj, cls, name: str):
    if not isinstance(obj, cls):
        raise TypeError(f"{name} must be a {cls.__name__}, got {type(obj).__name__}")
    return obj
