"""Gridded map rendering and raster/CSV writers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Interpolator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class BBox:
    lon_min: float
    lon_max: float
    lat_min: float
    lat_max: float

    def __post_init__(self):
        vals = (self.lon_min, self.lon_max, self.lat_min, self.lat_max)
        if not all(np.isfinite(vals)) or self.lon_min >= self.lon_max or self.lat_min >= self.lat_max:
            raise ValueError(f"invalid bounding box {vals}")

    @classmethod
    def parse(cls, text: str) -> "BBox":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox needs four comma-separated numbers: lon_min,lon_max,lat_min,lat_max")
        return cls(*parts)


@dataclass(frozen=True)
class GridMap:
    """``values[row, col]``: row 0 is the northern edge (lat_max), col 0 the western edge."""

    bbox: BBox
    nx: int
    ny: int
    values: np.ndarray

    def lons(self) -> np.ndarray:
        return np.linspace(self.bbox.lon_min, self.bbox.lon_max, self.nx)

    def lats(self) -> np.ndarray:
        return np.linspace(self.bbox.lat_max, self.bbox.lat_min, self.ny)


def grid_nodes(bbox: BBox, nx: int, ny: int) -> np.ndarray:
    """Node coordinates in row-major, north-up order, shape (ny * nx, 2)."""
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 nodes per axis")
    lon = np.linspace(bbox.lon_min, bbox.lon_max, nx)
    lat = np.linspace(bbox.lat_max, bbox.lat_min, ny)
    LON, LAT = np.meshgrid(lon, lat)
    return np.column_stack([LON.ravel(), LAT.ravel()])


def render_grid(interpolator: Interpolator, conditions, bbox: BBox, nx: int, ny: int) -> GridMap:
    """Evaluate ``interpolator(m_co, x_co, nodes)`` on every grid node."""
    m_co, x_co = conditions
    nodes = grid_nodes(bbox, nx, ny)
    try:
        vals = np.asarray(interpolator(np.asarray(m_co), np.asarray(x_co), nodes), dtype=np.float64)
    except Exception as exc:
        raise RenderError(f"interpolation failed on {nx}x{ny} grid over {bbox}: {exc}") from exc
    if vals.shape != (len(nodes),):
        raise RenderError(f"interpolator returned shape {vals.shape}, expected ({len(nodes)},)")
    bad = np.flatnonzero(~np.isfinite(vals))
    if len(bad):
        lon, lat = nodes[bad[0]]
        raise RenderError(f"non-finite value at grid node lon={lon!r} lat={lat!r}")
    return GridMap(bbox, nx, ny, vals.reshape(ny, nx))


def grid_csv(grid: GridMap) -> str:
    nodes = grid_nodes(grid.bbox, grid.nx, grid.ny)
    lines = ["lon,lat,value"]
    lines += [f"{lon!r},{lat!r},{v!r}" for (lon, lat), v in zip(nodes.tolist(), grid.values.ravel().tolist())]
    return "\n".join(lines) + "\n"


def grid_pgm(grid: GridMap) -> str:
    """Plain (P2) 16-bit PGM, min-max scaled; the scale is recorded in a comment."""
    lo, hi = float(grid.values.min()), float(grid.values.max())
    span = hi - lo
    levels = np.zeros(grid.values.shape, dtype=np.int64) if span == 0 else \
        np.round((grid.values - lo) / span * 65535).astype(np.int64)
    out = ["P2", f"# scale: min={lo!r} max={hi!r}",
           "# orientation: row-major, first row = lat_max (north-up), first column = lon_min",
           f"{grid.nx} {grid.ny}", "65535"]
    out += [" ".join(str(v) for v in row) for row in levels]
    return "\n".join(out) + "\n"


def read_pgm_scale(text: str) -> tuple[float, float]:
    for line in text.splitlines():
        if line.startswith("# scale:"):
            parts = dict(p.split("=") for p in line[len("# scale:"):].split())
            return float(parts["min"]), float(parts["max"])
    raise ValueError("no scale comment in PGM")
