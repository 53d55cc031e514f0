"""Segmented maps, occupancy grids, probability grids, and search graphs.

World model conventions used across the package:

* rasters are numpy arrays of shape ``(height, width)`` (row = y, col = x);
* positions are ``(x, y)`` in meters, cell ``(ix, iy)`` covers
  ``[ix*res, (ix+1)*res) x [iy*res, (iy+1)*res)``;
* a cell's flat index is ``iy * width + ix``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    DegeneratePriorError,
    EmptySubgraphError,
    MapFormatError,
)

N_CLASSES = 14

#: default labels for the 14 semantic classes of urban segmented maps
DEFAULT_CLASS_NAMES = (
    "pavement",
    "building",
    "road",
    "sidewalk",
    "grass",
    "tree",
    "water",
    "fence",
    "vehicle",
    "street_furniture",
    "wall",
    "door",
    "stairs",
    "unknown",
)

DEFAULT_GRID_DISTANCE = 3.5
DEFAULT_CLEARANCE = 0.40
DEFAULT_NEIGHBORHOOD = 7


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SegmentedMap:
    """Per-cell semantic class ids in ``[0, 14)`` over a metric raster."""

    resolution: float
    classes: np.ndarray
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        classes = np.ascontiguousarray(self.classes, dtype=np.uint8)
        if classes.ndim != 2 or classes.size == 0:
            raise MapFormatError("classes: expected a non-empty 2-D raster")
        if self.resolution <= 0:
            raise MapFormatError(f"resolution: must be > 0, got {self.resolution}")
        if classes.max() >= N_CLASSES:
            raise MapFormatError(
                f"classes: class id {int(classes.max())} out of range [0, {N_CLASSES})"
            )
        if len(self.class_names) != N_CLASSES:
            raise MapFormatError(
                f"class_names: expected {N_CLASSES} labels, got {len(self.class_names)}"
            )
        object.__setattr__(self, "classes", _freeze(classes))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        """Map size (width_m, height_m) in meters."""
        return self.width * self.resolution, self.height * self.resolution

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "class_names": list(self.class_names),
            "classes": self.classes.ravel().tolist(),
        }


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean obstacle raster derived from a segmented map."""

    resolution: float
    occupied: np.ndarray

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupied, dtype=bool)
        object.__setattr__(self, "occupied", _freeze(occ))

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def free(self) -> np.ndarray:
        return ~self.occupied

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Grid cell containing a point; boundary points clamp inward."""
        ix = min(int(x / self.resolution), self.width - 1)
        iy = min(int(y / self.resolution), self.height - 1)
        return max(ix, 0), max(iy, 0)

    def flat_of(self, x: float, y: float) -> int:
        ix, iy = self.cell_of(x, y)
        return iy * self.width + ix

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width * self.resolution and 0.0 <= y <= self.height * self.resolution

    def is_free_at(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        ix, iy = self.cell_of(x, y)
        return not self.occupied[iy, ix]

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) meter coordinates of every cell center, each shaped (h, w)."""
        xs = (np.arange(self.width) + 0.5) * self.resolution
        ys = (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class ProbabilityGrid:
    """Nonnegative target-location mass per cell; zero on obstacles."""

    resolution: float
    mass: np.ndarray

    def __post_init__(self):
        mass = np.ascontiguousarray(self.mass, dtype=np.float64)
        if (mass < 0).any():
            raise MapFormatError("mass: negative values are not a probability mass")
        object.__setattr__(self, "mass", _freeze(mass))

    @property
    def height(self) -> int:
        return self.mass.shape[0]

    @property
    def width(self) -> int:
        return self.mass.shape[1]

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def normalized(self, target: float = 1.0) -> "ProbabilityGrid":
        total = self.total
        if total <= 0:
            raise DegeneratePriorError("cannot normalize a zero-mass grid")
        return ProbabilityGrid(self.resolution, self.mass * (target / total))

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "mass": self.mass.ravel().tolist(),
        }


@dataclass(frozen=True)
class AgentProfile:
    """Motion and sensing parameters of one search agent."""

    id: int
    start: tuple[float, float]
    visibility_radius: float = 2.5
    speed: float = 0.5
    restricted_classes: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.visibility_radius <= 0:
            raise MapFormatError("visibility_radius: must be > 0")
        if self.speed <= 0:
            raise MapFormatError("speed: must be > 0")
        object.__setattr__(self, "restricted_classes", frozenset(self.restricted_classes))
        object.__setattr__(self, "start", (float(self.start[0]), float(self.start[1])))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "start": list(self.start),
            "visibility_radius": self.visibility_radius,
            "speed": self.speed,
            "restricted_classes": sorted(self.restricted_classes),
        }

    @staticmethod
    def from_json(data: dict) -> "AgentProfile":
        try:
            return AgentProfile(
                id=int(data["id"]),
                start=(float(data["start"][0]), float(data["start"][1])),
                visibility_radius=float(data.get("visibility_radius", 2.5)),
                speed=float(data.get("speed", 0.5)),
                restricted_classes=frozenset(data.get("restricted_classes", ())),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MapFormatError(f"agent profile: {exc}") from exc


@dataclass(frozen=True)
class PreferredArea:
    """Axis-aligned rectangle (meters) marking where one agent wants to search."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    owner: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise MapFormatError(
                f"preferred area: degenerate rectangle "
                f"({self.x_min},{self.y_min})-({self.x_max},{self.y_max})"
            )

    def contains(self, x, y):
        return (self.x_min <= x) & (x <= self.x_max) & (self.y_min <= y) & (y <= self.y_max)

    def to_json(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "owner": self.owner,
        }

    @staticmethod
    def from_json(data: dict) -> "PreferredArea":
        try:
            return PreferredArea(
                x_min=float(data["x_min"]),
                y_min=float(data["y_min"]),
                x_max=float(data["x_max"]),
                y_max=float(data["y_max"]),
                owner=int(data["owner"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MapFormatError(f"preferred area: {exc}") from exc


class SearchGraph:
    """Sampled nodes plus symmetric arc set with Euclidean lengths.

    Node ids are stable: restricting the graph for an agent masks nodes out
    instead of renumbering (``active`` flags), so plans can be compared across
    agents.
    """

    def __init__(
        self,
        positions: np.ndarray,
        adjacency: np.ndarray,
        distances: np.ndarray,
        grid_distance: float,
        active: np.ndarray | None = None,
    ):
        self.positions = _freeze(np.ascontiguousarray(positions, dtype=np.float64))
        self.adjacency = _freeze(np.ascontiguousarray(adjacency, dtype=bool))
        self.distances = _freeze(np.ascontiguousarray(distances, dtype=np.float64))
        self.grid_distance = float(grid_distance)
        if active is None:
            active = np.ones(len(positions), dtype=bool)
        self.active = _freeze(np.ascontiguousarray(active, dtype=bool))
        self._neighbors: list[np.ndarray] | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def neighbors(self, i: int) -> np.ndarray:
        if self._neighbors is None:
            self._neighbors = [
                np.flatnonzero(row).astype(np.int64) for row in self.adjacency
            ]
        return self._neighbors[i]

    def arc_length(self, i: int, j: int) -> float:
        if not self.adjacency[i, j]:
            raise KeyError(f"no arc between nodes {i} and {j}")
        return float(self.distances[i, j])

    def arcs(self) -> Iterable[tuple[int, int, float]]:
        """Yield each undirected arc once as (i, j, d) with i < j."""
        ii, jj = np.nonzero(np.triu(self.adjacency, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            yield i, j, float(self.distances[i, j])

    def nearest_node(self, x: float, y: float) -> int:
        """Closest active node to a metric position."""
        act = np.flatnonzero(self.active)
        if act.size == 0:
            raise EmptySubgraphError("graph has no active nodes")
        d2 = ((self.positions[act] - (x, y)) ** 2).sum(axis=1)
        return int(act[int(np.argmin(d2))])

    def masked(self, keep: np.ndarray) -> "SearchGraph":
        """Copy of the graph with only ``keep`` nodes active; arcs touching a
        removed node are dropped; node ids preserved."""
        keep = np.asarray(keep, dtype=bool) & self.active
        adj = self.adjacency & keep[:, None] & keep[None, :]
        return SearchGraph(self.positions, adj, self.distances, self.grid_distance, keep)

    def to_json(self) -> dict:
        return {
            "grid_distance": self.grid_distance,
            "neighborhood": getattr(self, "neighborhood", None),
            "nodes": [
                {"id": i, "x": float(p[0]), "y": float(p[1]), "active": bool(self.active[i])}
                for i, p in enumerate(self.positions)
            ],
            "arcs": [[i, j, d] for i, j, d in self.arcs()],
        }

    @staticmethod
    def from_json(data: dict) -> "SearchGraph":
        try:
            nodes = sorted(data["nodes"], key=lambda n: n["id"])
            positions = np.array([[n["x"], n["y"]] for n in nodes], dtype=np.float64)
            n = len(nodes)
            adj = np.zeros((n, n), dtype=bool)
            dist = np.zeros((n, n), dtype=np.float64)
            for i, j, d in data["arcs"]:
                adj[i, j] = adj[j, i] = True
                dist[i, j] = dist[j, i] = d
            active = np.array([bool(nd.get("active", True)) for nd in nodes])
            return SearchGraph(positions, adj, dist, float(data["grid_distance"]), active)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise MapFormatError(f"graph file: {exc}") from exc


# ---------------------------------------------------------------------------
# file formats


def load_segmented_map(path: str | Path) -> SegmentedMap:
    """Load a segmented map from its JSON file format.

    The file carries ``width``, ``height``, ``resolution``, ``class_names``
    and either an inline row-major ``classes`` array or a ``class_image``
    reference to an 8-bit grayscale image whose pixel values are class ids.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MapFormatError(f"map file {path}: {exc}") from exc
    for key in ("width", "height", "resolution"):
        if key not in data:
            raise MapFormatError(f"map file {path}: missing field '{key}'")
    width, height = int(data["width"]), int(data["height"])
    if width <= 0 or height <= 0:
        raise MapFormatError(f"map file {path}: width/height must be positive")
    if "classes" in data:
        raw = np.asarray(data["classes"])
        if raw.size != width * height:
            raise MapFormatError(
                f"map file {path}: classes has {raw.size} entries, expected {width * height}"
            )
        classes = raw.reshape(height, width)
    elif "class_image" in data:
        from PIL import Image

        img_path = path.parent / data["class_image"]
        try:
            classes = np.asarray(Image.open(img_path).convert("L"))
        except OSError as exc:
            raise MapFormatError(f"map file {path}: class_image: {exc}") from exc
        if classes.shape != (height, width):
            raise MapFormatError(
                f"map file {path}: class_image is {classes.shape}, expected {(height, width)}"
            )
    else:
        raise MapFormatError(f"map file {path}: missing field 'classes' or 'class_image'")
    if (np.asarray(classes) >= N_CLASSES).any():
        raise MapFormatError(
            f"map file {path}: classes: class id out of range [0, {N_CLASSES})"
        )
    names = tuple(data.get("class_names", DEFAULT_CLASS_NAMES))
    return SegmentedMap(float(data["resolution"]), np.asarray(classes), names)


def save_segmented_map(seg: SegmentedMap, path: str | Path) -> None:
    Path(path).write_text(json.dumps(seg.to_json()))


def load_prior(path: str | Path, resolution: float | None = None) -> ProbabilityGrid:
    """Load a probability grid from its JSON file format."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MapFormatError(f"prior file {path}: {exc}") from exc
    for key in ("width", "height", "mass"):
        if key not in data:
            raise MapFormatError(f"prior file {path}: missing field '{key}'")
    width, height = int(data["width"]), int(data["height"])
    raw = np.asarray(data["mass"], dtype=np.float64)
    if raw.size != width * height:
        raise MapFormatError(
            f"prior file {path}: mass has {raw.size} entries, expected {width * height}"
        )
    if (raw < 0).any():
        raise MapFormatError(f"prior file {path}: mass: negative entries")
    res = float(data.get("resolution", resolution if resolution is not None else 1.0))
    return ProbabilityGrid(res, raw.reshape(height, width))


def save_prior(prior: ProbabilityGrid, path: str | Path) -> None:
    Path(path).write_text(json.dumps(prior.to_json()))


def load_agents(path: str | Path) -> list[AgentProfile]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MapFormatError(f"agents file {path}: {exc}") from exc
    entries = data["agents"] if isinstance(data, dict) else data
    profiles = [AgentProfile.from_json(e) for e in entries]
    profiles.sort(key=lambda p: p.id)
    if [p.id for p in profiles] != list(range(len(profiles))):
        raise MapFormatError(f"agents file {path}: ids must be 0..M-1 without gaps")
    return profiles


# ---------------------------------------------------------------------------
# derivations


def derive_occupancy(seg: SegmentedMap, obstacle_classes: Iterable[int]) -> OccupancyGrid:
    """Occupancy raster: a cell is occupied iff its class is an obstacle class."""
    obstacle_classes = set(obstacle_classes)
    bad = [c for c in obstacle_classes if not 0 <= c < N_CLASSES]
    if bad:
        raise MapFormatError(f"obstacle_classes: ids out of range: {sorted(bad)}")
    occupied = np.isin(seg.classes, sorted(obstacle_classes))
    return OccupancyGrid(seg.resolution, occupied)


def class_weight_prior(
    seg: SegmentedMap, occ: OccupancyGrid, weights: Sequence[float]
) -> ProbabilityGrid:
    """Prior built from per-class weights: mass = weight of the cell's class on
    free cells, zero on obstacles, normalized to total 1.

    Stands in for an externally learned map predictor; arbitrary priors can
    also be loaded from file via :func:`load_prior`.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size != N_CLASSES:
        raise MapFormatError(f"weights: expected {N_CLASSES} values, got {w.size}")
    if (w < 0).any():
        raise MapFormatError("weights: negative class weights")
    mass = w[seg.classes]
    mass[occ.occupied] = 0.0
    total = mass.sum()
    if total <= 0:
        raise DegeneratePriorError("no free cell has positive class weight")
    return ProbabilityGrid(seg.resolution, mass / total)


# ---------------------------------------------------------------------------
# node sampling

_BIG = 1e18


def _rect_distance_sq(px: float, py: float, x0: float, y0: float, x1: float, y1: float) -> float:
    dx = max(x0 - px, 0.0, px - x1)
    dy = max(y0 - py, 0.0, py - y1)
    return dx * dx + dy * dy


def obstacle_within(occ: OccupancyGrid, x: float, y: float, clearance: float) -> bool:
    """True if any occupied cell's area lies within ``clearance`` of the point."""
    res = occ.resolution
    ix0 = max(int(math.floor((x - clearance) / res)), 0)
    ix1 = min(int(math.floor((x + clearance) / res)), occ.width - 1)
    iy0 = max(int(math.floor((y - clearance) / res)), 0)
    iy1 = min(int(math.floor((y + clearance) / res)), occ.height - 1)
    c2 = clearance * clearance
    occu = occ.occupied
    for iy in range(iy0, iy1 + 1):
        for ix in range(ix0, ix1 + 1):
            if occu[iy, ix] and _rect_distance_sq(
                x, y, ix * res, iy * res, (ix + 1) * res, (iy + 1) * res
            ) <= c2:
                return True
    return False


def sample_nodes(
    occ: OccupancyGrid,
    grid_distance: float = DEFAULT_GRID_DISTANCE,
    clearance: float = DEFAULT_CLEARANCE,
) -> np.ndarray:
    """Sample one candidate node per square of a ``grid_distance`` tiling.

    Per square, in order of preference:

    1. the square centroid, if no obstacle lies within ``clearance`` of it;
    2. the centroid of the square's free-cell region (snapped to the nearest
       free cell center in the square if the centroid itself is occupied);
    3. a free square vertex, picking the one farthest from any obstacle
       (ties broken by lowest x, then y).

    Squares with no free space yield nothing. Returns an (n, 2) position array.
    """
    if grid_distance <= 0:
        raise MapFormatError("grid_distance: must be > 0")
    if clearance < 0:
        raise MapFormatError("clearance: must be >= 0")
    res = occ.resolution
    width_m = occ.width * res
    height_m = occ.height * res
    nx = max(int(math.ceil(width_m / grid_distance - 1e-9)), 1)
    ny = max(int(math.ceil(height_m / grid_distance - 1e-9)), 1)

    cx = (np.arange(occ.width) + 0.5) * res
    cy = (np.arange(occ.height) + 0.5) * res
    free = occ.free

    # distance-to-obstacle field, only needed for the vertex fallback
    edt: np.ndarray | None = None

    def obstacle_distance(x: float, y: float) -> float:
        nonlocal edt
        if edt is None:
            if occ.occupied.any():
                edt = ndimage.distance_transform_edt(free) * res
            else:
                edt = np.full(occ.occupied.shape, _BIG)
        ix, iy = occ.cell_of(x, y)
        return float(edt[iy, ix])

    nodes: list[tuple[float, float]] = []
    for sy in range(ny):
        y0 = sy * grid_distance
        y1 = min((sy + 1) * grid_distance, height_m)
        iy_sel = np.flatnonzero((cy >= y0) & (cy < y1 if sy < ny - 1 else cy <= y1))
        for sx in range(nx):
            x0 = sx * grid_distance
            x1 = min((sx + 1) * grid_distance, width_m)
            ix_sel = np.flatnonzero((cx >= x0) & (cx < x1 if sx < nx - 1 else cx <= x1))
            sq_free = free[np.ix_(iy_sel, ix_sel)]

            centroid = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
            if occ.is_free_at(*centroid) and not obstacle_within(occ, *centroid, clearance):
                nodes.append(centroid)
                continue

            if sq_free.any():
                fy, fx = np.nonzero(sq_free)
                xs = cx[ix_sel[fx]]
                ys = cy[iy_sel[fy]]
                px, py = float(xs.mean()), float(ys.mean())
                if not occ.is_free_at(px, py):
                    # concave free region: snap to nearest free cell center
                    d2 = (xs - px) ** 2 + (ys - py) ** 2
                    order = np.lexsort((ys, xs, d2))
                    px, py = float(xs[order[0]]), float(ys[order[0]])
                nodes.append((px, py))
                continue

            vertices = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
            best = None
            for vx, vy in vertices:
                if not occ.is_free_at(vx, vy):
                    continue
                score = (-obstacle_distance(vx, vy), vx, vy)
                if best is None or score < best[0]:
                    best = (score, (vx, vy))
            if best is not None:
                nodes.append(best[1])
    if not nodes:
        return np.empty((0, 2), dtype=np.float64)
    return np.asarray(nodes, dtype=np.float64)


def build_graph(
    nodes: np.ndarray,
    occ: OccupancyGrid,
    neighborhood: int = DEFAULT_NEIGHBORHOOD,
    grid_distance: float = DEFAULT_GRID_DISTANCE,
) -> SearchGraph:
    """Connect sampled nodes whose squares fall inside an odd
    ``neighborhood`` x ``neighborhood`` window and whose joining segment
    crosses no occupied cell."""
    from .visibility import segment_clear

    if neighborhood < 3 or neighborhood % 2 == 0:
        raise MapFormatError(f"neighborhood: must be odd and >= 3, got {neighborhood}")
    nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 2)
    n = len(nodes)
    half = (neighborhood - 1) // 2
    squares = np.floor(nodes / grid_distance).astype(np.int64)
    adj = np.zeros((n, n), dtype=bool)
    dist = np.zeros((n, n), dtype=np.float64)
    has_obstacles = bool(occ.occupied.any())
    for i in range(n):
        dsq = np.abs(squares[i + 1 :] - squares[i])
        cand = np.flatnonzero((dsq[:, 0] <= half) & (dsq[:, 1] <= half)) + i + 1
        for j in cand.tolist():
            if has_obstacles and not segment_clear(occ, nodes[i], nodes[j]):
                continue
            d = float(np.hypot(*(nodes[j] - nodes[i])))
            if d <= 0:
                continue
            adj[i, j] = adj[j, i] = True
            dist[i, j] = dist[j, i] = d
    graph = SearchGraph(nodes, adj, dist, grid_distance)
    graph.neighborhood = neighborhood
    return graph


def agent_subgraph(graph: SearchGraph, agent: AgentProfile, seg: SegmentedMap) -> SearchGraph:
    """Remove the nodes standing on the agent's restricted semantic classes."""
    if not agent.restricted_classes:
        return graph
    keep = graph.active.copy()
    res = seg.resolution
    for i, (x, y) in enumerate(graph.positions):
        if not keep[i]:
            continue
        ix = min(int(x / res), seg.width - 1)
        iy = min(int(y / res), seg.height - 1)
        if int(seg.classes[iy, ix]) in agent.restricted_classes:
            keep[i] = False
    sub = graph.masked(keep)
    if sub.n_active == 0:
        raise EmptySubgraphError(
            f"agent {agent.id}: restricted classes removed every node"
        )
    return sub
