"""Target-location belief, preference splits, and expected-time evaluation.

The belief over the static target is kept in unnormalized form: each agent
holds a nonnegative mass array (its share of the prior) and sweeping simply
zeroes cells and moves their mass into ``cumulative_found``. Working
unnormalized means the expected-time sums need no renormalization step.

Plan evaluation produces two figures from one forward pass:

* ``et``   - expected detection time of the merged map: a cell counts as
  swept the first time ANY agent sees it. This is the physical expected time
  and the residual/coverage measure.
* ``est``  - expected time under per-agent assignment: each agent only
  collects the mass assigned to it, so a plan that sends the wrong agent to
  an area scores worse even if the area was technically seen. This is the
  objective that makes preference assignments steer paths.

With a single agent, or when each agent sweeps exactly the mass assigned to
it, both figures coincide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyAgentPriorError, InvalidPlanError, MapFormatError
from .maps import OccupancyGrid, PreferredArea, ProbabilityGrid, SearchGraph
from .visibility import VisibilityCache, VisibleRegion

MASS_TOL = 1e-9


@dataclass(frozen=True)
class BeliefState:
    """Unnormalized per-agent mass arrays (flat, length width*height)."""

    agent_masses: tuple[np.ndarray, ...]
    step: int = 0
    cumulative_found: float = 0.0

    def __post_init__(self):
        frozen = []
        for arr in self.agent_masses:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "agent_masses", tuple(frozen))

    @property
    def n_agents(self) -> int:
        return len(self.agent_masses)

    @property
    def remaining(self) -> float:
        return float(sum(arr.sum() for arr in self.agent_masses))

    def merged(self) -> np.ndarray:
        """Total remaining mass per cell across agents."""
        out = np.zeros_like(self.agent_masses[0])
        for arr in self.agent_masses:
            out += arr
        return out


def belief_from_grids(grids: Sequence[ProbabilityGrid]) -> BeliefState:
    return BeliefState(tuple(g.mass.ravel().copy() for g in grids))


def equal_split(prior: ProbabilityGrid, n_agents: int) -> list[ProbabilityGrid]:
    """The no-preferences split: every agent holds prior / M."""
    if n_agents < 1:
        raise MapFormatError("n_agents: must be >= 1")
    return [ProbabilityGrid(prior.resolution, prior.mass / n_agents) for _ in range(n_agents)]


def split_sub_priors(
    prior: ProbabilityGrid, areas: Sequence[PreferredArea], n_agents: int
) -> list[ProbabilityGrid]:
    """Split a normalized prior into per-agent maps, each totaling 1/M.

    Mass inside an agent's preferred rectangles goes to that agent
    (overlapping claims resolve to the lowest agent id). Mass claimed by
    nobody is divided equally among the agents that declared no areas, or
    among everybody when all agents declared areas. Each share is then
    rescaled to total exactly 1/M.
    """
    if n_agents < 1:
        raise MapFormatError("n_agents: must be >= 1")
    if abs(prior.total - 1.0) > 1e-6:
        raise MapFormatError(f"prior must be normalized to 1, total is {prior.total}")
    for area in areas:
        if not (0 <= area.owner < n_agents):
            raise MapFormatError(f"preferred area owner {area.owner} out of range [0, {n_agents})")

    h, w = prior.mass.shape
    res = prior.resolution
    xs = (np.arange(w) + 0.5) * res
    ys = (np.arange(h) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)

    owner = np.full((h, w), -1, dtype=np.int64)  # -1 = unclaimed
    for area in sorted(areas, key=lambda a: a.owner, reverse=True):
        owner[area.contains(gx, gy)] = area.owner

    declared = {a.owner for a in areas}
    pool = sorted(set(range(n_agents)) - declared) or list(range(n_agents))

    shares = [np.zeros((h, w)) for _ in range(n_agents)]
    unclaimed = owner < 0
    for m in range(n_agents):
        shares[m][owner == m] = prior.mass[owner == m]
        if m in pool:
            shares[m][unclaimed] += prior.mass[unclaimed] / len(pool)

    out = []
    target = 1.0 / n_agents
    for m, share in enumerate(shares):
        total = share.sum()
        if total <= 0:
            raise EmptyAgentPriorError(
                f"agent {m} was assigned zero probability mass; widen its preferred areas"
            )
        out.append(ProbabilityGrid(res, share * (target / total)))
    return out


# ---------------------------------------------------------------------------
# sweep updates


def _union_cells(regions: Sequence[VisibleRegion]) -> np.ndarray:
    if not regions:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate([r.cells for r in regions]))


def step_probability(state: BeliefState, regions: Sequence[VisibleRegion]) -> float:
    """Probability of first detection at this step: the total remaining mass
    (all agents' maps) inside the union of the visible regions. A cell seen
    by several agents is counted once."""
    cells = _union_cells(regions)
    return float(sum(arr[cells].sum() for arr in state.agent_masses))


def step_probability_by_agent(
    state: BeliefState, regions: Sequence[VisibleRegion]
) -> np.ndarray:
    """Split of :func:`step_probability` by crediting each swept cell's full
    mass to the lowest-id agent that sees it."""
    credit = np.zeros(state.n_agents)
    merged = state.merged()
    claimed: np.ndarray | None = None
    for region in sorted(regions, key=lambda r: r.agent_id):
        cells = region.cells
        if claimed is not None and claimed.size:
            cells = cells[~np.isin(cells, claimed)]
        credit[region.agent_id] += merged[cells].sum()
        claimed = cells if claimed is None else np.concatenate([claimed, cells])
    return credit


def bayes_no_detection_update(
    state: BeliefState, regions: Sequence[VisibleRegion]
) -> BeliefState:
    """No-detection update: all mass inside the union of the agents' visible
    cells is removed from every agent map and added to ``cumulative_found``."""
    cells = _union_cells(regions)
    removed = 0.0
    new_masses = []
    for arr in state.agent_masses:
        removed += float(arr[cells].sum())
        nxt = arr.copy()
        nxt[cells] = 0.0
        new_masses.append(nxt)
    return BeliefState(tuple(new_masses), state.step + 1, state.cumulative_found + removed)


# ---------------------------------------------------------------------------
# plan evaluation


@dataclass(frozen=True)
class PlanEvaluation:
    """Per-step detection probabilities and the two expected-time figures."""

    p_steps: np.ndarray  # p_k, k = 1..N (merged-map accounting)
    cumulative: np.ndarray  # P(t <= k)
    est: float  # expected time under per-agent assignment
    et: float  # expected time of the merged map
    residual: float  # 1 - P(t <= N)
    horizon: int
    dt: float

    def to_json(self) -> dict:
        return {
            "p_steps": self.p_steps.tolist(),
            "cumulative": self.cumulative.tolist(),
            "assigned_expected_time": self.est,
            "expected_time": self.et,
            "residual": self.residual,
            "horizon": self.horizon,
            "dt": self.dt,
        }


def _as_graph_list(graphs, n_agents: int) -> list[SearchGraph]:
    if isinstance(graphs, SearchGraph):
        return [graphs] * n_agents
    graphs = list(graphs)
    if len(graphs) != n_agents:
        raise InvalidPlanError(f"expected {n_agents} agent graphs, got {len(graphs)}")
    return graphs


def _validate_plans(plans: Sequence[Sequence[int]], graphs: list[SearchGraph]) -> None:
    for m, (plan, graph) in enumerate(zip(plans, graphs)):
        if len(plan) == 0:
            raise InvalidPlanError(f"agent {m}: empty node sequence")
        for node in plan:
            if not (0 <= node < graph.n_nodes) or not graph.active[node]:
                raise InvalidPlanError(f"agent {m}: node {node} not in the agent's subgraph")
        for a, b in zip(plan, plan[1:]):
            if a != b and not graph.adjacency[a, b]:
                raise InvalidPlanError(f"agent {m}: nodes {a} and {b} are not arc-connected")


def expected_time(
    plans: Sequence[Sequence[int]],
    state: BeliefState,
    graphs,
    profiles,
    occ: OccupancyGrid,
    horizon: int | None = None,
    dt: float = 1.0,
    visibility: Sequence[VisibilityCache] | None = None,
) -> PlanEvaluation:
    """Finite-horizon expected time of a multi-agent plan.

    At step k (k = 1..N) each agent occupies its (k-1)-th plan node, agents
    that exhausted their sequence hold the last node and keep sensing. The
    survival form ``sum_k (1 - P(t<=k)) * dt`` is used, so unswept residual
    mass keeps contributing to the cost up to the horizon.
    """
    n_agents = state.n_agents
    if len(plans) != n_agents:
        raise InvalidPlanError(f"expected {n_agents} plans, got {len(plans)}")
    graphs = _as_graph_list(graphs, n_agents)
    _validate_plans(plans, graphs)
    if visibility is None:
        visibility = [VisibilityCache(occ, p.visibility_radius) for p in profiles]
    n = horizon if horizon is not None else max(len(p) for p in plans)
    if n < 1:
        raise InvalidPlanError("horizon must be >= 1")

    assigned = [arr.copy() for arr in state.agent_masses]
    current = state
    p_steps = np.zeros(n)
    assigned_collected = np.zeros(n)
    for k in range(1, n + 1):
        regions = []
        for m, plan in enumerate(plans):
            node = plan[min(k - 1, len(plan) - 1)]
            pos = graphs[m].positions[node]
            cells = visibility[m].cells_for_position(pos[0], pos[1])
            regions.append(
                VisibleRegion(m, (float(pos[0]), float(pos[1])), profiles[m].visibility_radius, cells)
            )
            gain = float(assigned[m][regions[-1].cells].sum())
            if gain:
                assigned_collected[k - 1] += gain
                assigned[m][regions[-1].cells] = 0.0
        p_steps[k - 1] = step_probability(current, regions)
        current = bayes_no_detection_update(current, regions)

    cumulative = np.cumsum(p_steps)
    et = float((1.0 - cumulative).sum() * dt)
    est = float((1.0 - np.cumsum(assigned_collected)).sum() * dt)
    residual = float(1.0 - cumulative[-1])
    return PlanEvaluation(p_steps, cumulative, est, et, residual, n, dt)


def expected_time_naive(
    plans,
    state: BeliefState,
    graphs,
    profiles,
    occ: OccupancyGrid,
    horizon: int | None = None,
    dt: float = 1.0,
    visibility=None,
) -> float:
    """Truncated direct expectation ``sum_k k * p_k * dt``.

    Unlike the survival form this assigns zero cost to mass the plan never
    covers, so it under-values short plans; provided for comparison.
    """
    ev = expected_time(plans, state, graphs, profiles, occ, horizon, dt, visibility)
    k = np.arange(1, ev.horizon + 1)
    return float((k * ev.p_steps).sum() * dt)
