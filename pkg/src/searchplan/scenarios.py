"""Benchmark scenario construction: synthetic maps, priors, and problem assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import BeliefState, belief_from_grids, equal_split, split_sub_priors
from .colony import SearchProblem
from .errors import InvalidSpecError, MapFormatError
from .maps import (
    DEFAULT_CLEARANCE,
    DEFAULT_GRID_DISTANCE,
    DEFAULT_NEIGHBORHOOD,
    AgentProfile,
    OccupancyGrid,
    PreferredArea,
    ProbabilityGrid,
    SegmentedMap,
    SearchGraph,
    agent_subgraph,
    build_graph,
    derive_occupancy,
    load_prior,
    load_segmented_map,
    sample_nodes,
)

OBSTACLE_CLASSES_DEFAULT = frozenset({1, 10})  # building, wall


@dataclass(frozen=True)
class GaussianComponent:
    center: tuple[float, float]
    sigma: float
    weight: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0 or self.weight <= 0:
            raise InvalidSpecError("gaussian component: sigma and weight must be > 0")

    def to_json(self) -> dict:
        return {"center": list(self.center), "sigma": self.sigma, "weight": self.weight}

    @staticmethod
    def from_json(d: dict) -> "GaussianComponent":
        return GaussianComponent(
            (float(d["center"][0]), float(d["center"][1])),
            float(d["sigma"]),
            float(d.get("weight", 1.0)),
        )


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of one search world."""

    name: str = "scenario"
    map_source: str = "synthetic:empty"  # synthetic:empty | synthetic:walls | file:<path>
    width_m: float = 40.0
    height_m: float = 40.0
    resolution: float = 0.5
    obstacle_classes: frozenset[int] = OBSTACLE_CLASSES_DEFAULT
    prior_kind: str = "uniform"  # uniform | gaussian-mixture | file
    prior_file: str | None = None
    gaussians: tuple[GaussianComponent, ...] = ()
    agents: tuple[AgentProfile, ...] = (
        AgentProfile(0, (2.0, 2.0)),
        AgentProfile(1, (38.0, 38.0)),
    )
    target_placement: str = "sampled-from-prior"  # sampled-from-prior | fixed
    target_cell: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.prior_kind not in ("uniform", "gaussian-mixture", "file"):
            raise InvalidSpecError(f"prior kind {self.prior_kind!r} unknown")
        if self.prior_kind == "gaussian-mixture" and not self.gaussians:
            raise InvalidSpecError("gaussian-mixture prior needs at least one component")
        if self.prior_kind == "file" and not self.prior_file:
            raise InvalidSpecError("file prior needs prior_file")
        if self.target_placement not in ("sampled-from-prior", "fixed"):
            raise InvalidSpecError(f"target placement {self.target_placement!r} unknown")
        if self.target_placement == "fixed" and self.target_cell is None:
            raise InvalidSpecError("fixed target placement needs target_cell")
        if not self.agents:
            raise InvalidSpecError("at least one agent is required")
        object.__setattr__(self, "obstacle_classes", frozenset(self.obstacle_classes))
        object.__setattr__(self, "gaussians", tuple(self.gaussians))
        object.__setattr__(self, "agents", tuple(self.agents))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "map": {
                "source": self.map_source,
                "width_m": self.width_m,
                "height_m": self.height_m,
                "resolution": self.resolution,
                "obstacle_classes": sorted(self.obstacle_classes),
            },
            "prior": {
                "kind": self.prior_kind,
                "file": self.prior_file,
                "gaussians": [g.to_json() for g in self.gaussians],
            },
            "agents": [a.to_json() for a in self.agents],
            "target": {"placement": self.target_placement, "cell": self.target_cell},
            "seed": self.seed,
        }

    @staticmethod
    def from_json(data: dict) -> "ScenarioSpec":
        try:
            map_d = data.get("map", {})
            prior_d = data.get("prior", {})
            target_d = data.get("target", {})
            return ScenarioSpec(
                name=data.get("name", "scenario"),
                map_source=map_d.get("source", "synthetic:empty"),
                width_m=float(map_d.get("width_m", 40.0)),
                height_m=float(map_d.get("height_m", 40.0)),
                resolution=float(map_d.get("resolution", 0.5)),
                obstacle_classes=frozenset(
                    map_d.get("obstacle_classes", sorted(OBSTACLE_CLASSES_DEFAULT))
                ),
                prior_kind=prior_d.get("kind", "uniform"),
                prior_file=prior_d.get("file"),
                gaussians=tuple(
                    GaussianComponent.from_json(g) for g in prior_d.get("gaussians", [])
                ),
                agents=tuple(AgentProfile.from_json(a) for a in data.get("agents", []))
                or ScenarioSpec.__dataclass_fields__["agents"].default,
                target_placement=target_d.get("placement", "sampled-from-prior"),
                target_cell=target_d.get("cell"),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpecError(f"scenario spec: {exc}") from exc

    @staticmethod
    def load(path: str | Path) -> "ScenarioSpec":
        try:
            return ScenarioSpec.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidSpecError(f"scenario file {path}: {exc}") from exc


@dataclass(frozen=True)
class Scenario:
    """A generated world: rasters, prior, agents, and the hidden target."""

    spec: ScenarioSpec
    seg: SegmentedMap
    occ: OccupancyGrid
    prior: ProbabilityGrid
    profiles: tuple[AgentProfile, ...]
    target_cell: int

    @property
    def target_position(self) -> tuple[float, float]:
        iy, ix = divmod(self.target_cell, self.occ.width)
        res = self.occ.resolution
        return ((ix + 0.5) * res, (iy + 0.5) * res)


def _synthetic_map(spec: ScenarioSpec) -> SegmentedMap:
    w = int(round(spec.width_m / spec.resolution))
    h = int(round(spec.height_m / spec.resolution))
    if w <= 0 or h <= 0:
        raise InvalidSpecError("synthetic map: non-positive size")
    classes = np.zeros((h, w), dtype=np.uint8)
    if spec.map_source == "synthetic:walls":
        # two wall strips leaving a gap, enough to exercise occlusion
        wall = 10
        y_mid = h // 2
        classes[y_mid : y_mid + max(1, int(0.5 / spec.resolution)), : int(w * 0.4)] = wall
        x_q = int(w * 0.65)
        classes[int(h * 0.15) : int(h * 0.45), x_q : x_q + max(1, int(0.5 / spec.resolution))] = wall
    elif spec.map_source != "synthetic:empty":
        raise InvalidSpecError(f"unknown synthetic map source {spec.map_source!r}")
    return SegmentedMap(spec.resolution, classes)


def gaussian_mixture_prior(
    occ: OccupancyGrid, components: Sequence[GaussianComponent]
) -> ProbabilityGrid:
    """Normalized sum of isotropic Gaussians sampled at free cell centers."""
    gx, gy = occ.cell_centers()
    mass = np.zeros(occ.occupied.shape)
    for comp in components:
        d2 = (gx - comp.center[0]) ** 2 + (gy - comp.center[1]) ** 2
        mass += comp.weight * np.exp(-d2 / (2.0 * comp.sigma**2))
    mass[occ.occupied] = 0.0
    total = mass.sum()
    if total <= 0:
        raise InvalidSpecError("gaussian prior: all mass fell on obstacles")
    return ProbabilityGrid(occ.resolution, mass / total)


def uniform_prior(occ: OccupancyGrid) -> ProbabilityGrid:
    free = occ.free
    n = int(free.sum())
    if n == 0:
        raise InvalidSpecError("uniform prior: map has no free cells")
    mass = np.where(free, 1.0 / n, 0.0)
    return ProbabilityGrid(occ.resolution, mass)


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Materialize a spec: deterministic in the spec's seed."""
    if spec.map_source.startswith("file:"):
        seg = load_segmented_map(spec.map_source[len("file:") :])
    else:
        seg = _synthetic_map(spec)
    occ = derive_occupancy(seg, spec.obstacle_classes)

    if spec.prior_kind == "uniform":
        prior = uniform_prior(occ)
    elif spec.prior_kind == "gaussian-mixture":
        for comp in spec.gaussians:
            if not occ.in_bounds(*comp.center):
                raise InvalidSpecError(f"gaussian center {comp.center} outside the map")
        prior = gaussian_mixture_prior(occ, spec.gaussians)
    else:
        prior = load_prior(spec.prior_file, seg.resolution)
        if prior.mass.shape != occ.occupied.shape:
            raise InvalidSpecError("prior file shape does not match the map")
        prior = prior.normalized()

    for profile in spec.agents:
        if not occ.is_free_at(*profile.start):
            raise InvalidSpecError(f"agent {profile.id} start {profile.start} not in free space")

    if spec.target_placement == "fixed":
        cell = int(spec.target_cell)
        if not 0 <= cell < occ.width * occ.height:
            raise InvalidSpecError(f"target cell {cell} out of bounds")
        if occ.occupied.ravel()[cell]:
            raise InvalidSpecError(f"target cell {cell} lies on an obstacle")
    else:
        rng = np.random.default_rng(spec.seed)
        flat = prior.mass.ravel()
        cell = int(rng.choice(flat.size, p=flat / flat.sum()))
    return Scenario(spec, seg, occ, prior, spec.agents, cell)


# ---------------------------------------------------------------------------
# problem assembly


@dataclass(frozen=True)
class PlanningConfig:
    grid_distance: float = DEFAULT_GRID_DISTANCE
    neighborhood: int = DEFAULT_NEIGHBORHOOD
    clearance: float = DEFAULT_CLEARANCE


def build_graphs(
    scenario: Scenario, planning: PlanningConfig = PlanningConfig()
) -> tuple[SearchGraph, list[SearchGraph]]:
    """Global graph plus one restricted subgraph per agent."""
    nodes = sample_nodes(scenario.occ, planning.grid_distance, planning.clearance)
    graph = build_graph(nodes, scenario.occ, planning.neighborhood, planning.grid_distance)
    per_agent = [agent_subgraph(graph, p, scenario.seg) for p in scenario.profiles]
    return graph, per_agent


def build_problem(
    scenario: Scenario,
    planning: PlanningConfig = PlanningConfig(),
    areas: Sequence[PreferredArea] | None = None,
    agent_grids: Sequence[ProbabilityGrid] | None = None,
    dt: float = 1.0,
    graphs: Sequence[SearchGraph] | None = None,
) -> SearchProblem:
    """Assemble the optimizer instance.

    The per-agent mass split comes from ``agent_grids`` if given, else from
    ``areas`` via the preference split, else the equal split.
    """
    if graphs is None:
        _, graphs = build_graphs(scenario, planning)
    if agent_grids is None:
        if areas:
            agent_grids = split_sub_priors(scenario.prior, list(areas), len(scenario.profiles))
        else:
            agent_grids = equal_split(scenario.prior, len(scenario.profiles))
    belief = belief_from_grids(agent_grids)
    return SearchProblem(scenario.occ, list(graphs), list(scenario.profiles), belief, dt=dt)
