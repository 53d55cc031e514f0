"""Occlusion-aware circular sensing over occupancy rasters.

Detection follows an ideal circular sensor: a cell is seen iff its center is
within the sensing radius (boundary inclusive) and the straight segment from
the sensor to the cell center crosses no occupied cell. Ray tracing is an
exact segment-raster traversal, so results carry no angular sampling
artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPoseError
from .maps import OccupancyGrid

_EPS = 1e-12


def traverse_cells(x0: float, y0: float, x1: float, y1: float):
    """Yield the (ix, iy) cells whose interior a segment passes through.

    Coordinates are in grid units (1.0 = one cell). When the segment crosses
    exactly through a cell corner it steps diagonally, matching the set of
    cells whose interior is actually intersected.
    """
    ix, iy = int(math.floor(x0)), int(math.floor(y0))
    ix1, iy1 = int(math.floor(x1)), int(math.floor(y1))
    yield ix, iy
    dx = x1 - x0
    dy = y1 - y0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    tdx = abs(1.0 / dx) if dx != 0 else math.inf
    tdy = abs(1.0 / dy) if dy != 0 else math.inf
    if dx != 0:
        nxt = ix + 1 if dx > 0 else ix
        tmx = (nxt - x0) / dx
    else:
        tmx = math.inf
    if dy != 0:
        nyt = iy + 1 if dy > 0 else iy
        tmy = (nyt - y0) / dy
    else:
        tmy = math.inf
    # bounded step count guards float-degenerate endpoints
    for _ in range(2 * (abs(ix1 - ix) + abs(iy1 - iy)) + 4):
        if ix == ix1 and iy == iy1:
            return
        if tmx < tmy - _EPS:
            ix += sx
            tmx += tdx
        elif tmy < tmx - _EPS:
            iy += sy
            tmy += tdy
        else:
            ix += sx
            iy += sy
            tmx += tdx
            tmy += tdy
        yield ix, iy


def segment_clear(occ: OccupancyGrid, p: np.ndarray, q) -> bool:
    """True when the straight segment p->q (meters) crosses no occupied cell."""
    res = occ.resolution
    occupied = occ.occupied
    h, w = occupied.shape
    for ix, iy in traverse_cells(p[0] / res, p[1] / res, q[0] / res, q[1] / res):
        if 0 <= ix < w and 0 <= iy < h and occupied[iy, ix]:
            return False
    return True


@dataclass(frozen=True)
class VisibleRegion:
    """Cells seen by one agent from one pose."""

    agent_id: int
    center: tuple[float, float]
    radius: float
    cells: np.ndarray  # sorted flat cell indices

    def __post_init__(self):
        cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    def contains(self, cell: int) -> bool:
        i = int(np.searchsorted(self.cells, cell))
        return i < len(self.cells) and int(self.cells[i]) == cell

    def to_json(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "center": list(self.center),
            "radius": self.radius,
            "cells": self.cells.tolist(),
        }


def visible_region(
    occ: OccupancyGrid, center, radius: float, agent_id: int = -1
) -> VisibleRegion:
    """Free cells whose center is within ``radius`` of ``center`` (boundary
    counts as visible) and unobstructed from it."""
    x, y = float(center[0]), float(center[1])
    if radius <= 0:
        raise InvalidPoseError(f"radius must be > 0, got {radius}")
    if not occ.is_free_at(x, y):
        raise InvalidPoseError(f"sensor pose ({x}, {y}) lies on an obstacle or outside the map")
    res = occ.resolution
    ix0 = max(int(math.floor((x - radius) / res)), 0)
    ix1 = min(int(math.floor((x + radius) / res)), occ.width - 1)
    iy0 = max(int(math.floor((y - radius) / res)), 0)
    iy1 = min(int(math.floor((y + radius) / res)), occ.height - 1)
    xs = (np.arange(ix0, ix1 + 1) + 0.5) * res
    ys = (np.arange(iy0, iy1 + 1) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    in_range = (gx - x) ** 2 + (gy - y) ** 2 <= radius * radius + 1e-12
    free = occ.free[iy0 : iy1 + 1, ix0 : ix1 + 1]
    cand = in_range & free
    has_obstacles = bool(occ.occupied.any())
    out: list[int] = []
    width = occ.width
    for ly, lx in zip(*np.nonzero(cand)):
        cxm = float(gx[ly, lx])
        cym = float(gy[ly, lx])
        if has_obstacles and not segment_clear(occ, (x, y), (cxm, cym)):
            continue
        out.append((iy0 + int(ly)) * width + (ix0 + int(lx)))
    cells = np.array(sorted(out), dtype=np.int64)
    return VisibleRegion(agent_id, (x, y), radius, cells)


def detection_probability(region: VisibleRegion, target_cell: int) -> int:
    """Ideal-sensor detection: 1 iff the target cell is in the visible set."""
    return 1 if region.contains(target_cell) else 0


def first_detector(regions, target_cell: int) -> int | None:
    """Lowest agent id whose region sees the target cell, or None."""
    best: int | None = None
    for region in regions:
        if region.contains(target_cell) and (best is None or region.agent_id < best):
            best = region.agent_id
    return best


class VisibilityCache:
    """Per-node visible cell sets for a fixed occupancy raster and radius.

    Plan evaluation calls visibility for the same node poses millions of
    times; caching turns that into an array lookup.
    """

    def __init__(self, occ: OccupancyGrid, radius: float):
        self.occ = occ
        self.radius = float(radius)
        self._by_node: dict[int, np.ndarray] = {}
        self._by_pos: dict[tuple[float, float], np.ndarray] = {}

    def cells_for_position(self, x: float, y: float) -> np.ndarray:
        key = (round(float(x), 9), round(float(y), 9))
        cached = self._by_pos.get(key)
        if cached is None:
            cached = visible_region(self.occ, (x, y), self.radius).cells
            self._by_pos[key] = cached
        return cached

    def precompute(self, positions: np.ndarray) -> list[np.ndarray]:
        return [self.cells_for_position(p[0], p[1]) for p in positions]
