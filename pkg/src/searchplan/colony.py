"""MAX-MIN ant system planner for multi-agent minimum-time search.

Each agent owns a pheromone matrix and (optionally) a heuristic matrix over
its own restricted subgraph, and collects only the probability mass assigned
to it when the "assigned" objective is active. Path construction interleaves
agents, preferring to extend whichever agent currently has the shortest
path so the final plans stay balanced in length.

Pheromones are bounded in [tau_min, tau_max] and only the iteration-best or
best-so-far solution deposits (coin-flipped per iteration), following
Stuetzle & Hoos' MAX-MIN scheme.

Solution construction is the hot path (hundreds of thousands of ant walks
per benchmark); it runs through a numba-compiled kernel when numba is
importable and falls back to a step-identical pure-numpy implementation
otherwise. Both consume the same pre-drawn uniform buffer, so they produce
bit-identical solutions for a given seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .belief import BeliefState
from .errors import DeadEndError, EmptySubgraphError
from .maps import AgentProfile, OccupancyGrid, SearchGraph
from .visibility import VisibilityCache

_UNSEEN = np.iinfo(np.int32).max

OBJECTIVE_ASSIGNED = "assigned"
OBJECTIVE_GLOBAL = "global"


@dataclass(frozen=True)
class MMASParams:
    """Optimizer knobs; defaults follow common outdoor-search settings."""

    alpha: float = 1.0
    beta: float = 6.0
    rho: float = 0.002
    n_ants: int = 10
    n_iterations: int = 300
    residual_target: float = 0.014
    best_so_far_prob: float = 0.5
    shortest_agent_prob: float = 0.8
    seed: int = 0
    heuristic: str = "tsp"  # "tsp" (1/d) or "mts" (directional mass)
    objective: str = OBJECTIVE_ASSIGNED
    horizon: int | None = None  # per-agent step cap and evaluation horizon
    step_cap_factor: int = 4  # default cap = factor * node count
    dt: float = 1.0
    mts_range_factor: float = 3.0  # sector range = factor * grid_distance
    mts_half_angle_deg: float = 45.0
    mts_epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.n_ants < 1:
            raise ValueError("n_ants must be >= 1")
        for name in ("residual_target", "best_so_far_prob", "shortest_agent_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.heuristic not in ("tsp", "mts"):
            raise ValueError(f"heuristic must be 'tsp' or 'mts', got {self.heuristic!r}")
        if self.objective not in (OBJECTIVE_ASSIGNED, OBJECTIVE_GLOBAL):
            raise ValueError(f"objective must be 'assigned' or 'global', got {self.objective!r}")


class PheromoneField:
    """Per-agent arc pheromone matrices clamped to [tau_min, tau_max].

    Stored as one (M, C, C) array; ``tau`` exposes per-agent views.
    """

    def __init__(self, tau3: np.ndarray, tau_min: float, tau_max: float):
        self.tau3 = tau3
        self.tau_min = float(tau_min)
        self.tau_max = float(tau_max)

    @property
    def tau(self) -> list[np.ndarray]:
        return [self.tau3[m] for m in range(self.tau3.shape[0])]

    def copy(self) -> "PheromoneField":
        return PheromoneField(self.tau3.copy(), self.tau_min, self.tau_max)


@dataclass
class HeuristicField:
    """Per-agent arc desirability; ``values[m][i, j]`` is eta for arc (i, j)."""

    kind: str
    values: list[np.ndarray]
    powed: np.ndarray | None = None  # stacked values ** beta, cached

    def pow_beta(self, beta: float) -> np.ndarray:
        if self.powed is None:
            self.powed = np.power(np.stack(self.values), beta)
        return self.powed


@dataclass(frozen=True)
class AntSolution:
    """One multi-agent plan with its evaluation figures.

    ``est``/``et``/``residual`` are evaluated over the plan's own horizon
    (its longest node sequence). ``objective_value`` is the same survival sum
    extended to the fixed optimization horizon (the step cap), where agents
    hold their last node; mass a plan never collects therefore keeps costing
    time, which is what lets assignment constraints steer the search.
    """

    paths: tuple[tuple[int, ...], ...]
    est: float  # expected time under per-agent assignment
    et: float  # expected time of the merged map
    residual: float
    own_residual: float  # mass not collected by its assigned agent
    path_distances: tuple[float, ...]
    complete: bool
    objective_value: float

    def to_json(self, graphs: Sequence[SearchGraph] | None = None) -> dict:
        agents = []
        for m, path in enumerate(self.paths):
            entry: dict = {
                "id": m,
                "nodes": list(path),
                "path_distance": self.path_distances[m],
            }
            if graphs is not None:
                entry["polyline"] = [
                    [float(x), float(y)] for x, y in graphs[m].positions[list(path)]
                ]
            agents.append(entry)
        return {
            "agents": agents,
            "assigned_expected_time": self.est,
            "expected_time": self.et,
            "residual": self.residual,
            "complete": self.complete,
        }


class SearchProblem:
    """Assembled planning instance: per-agent graphs, masses, visibility.

    Precomputes flat array views of everything the construction kernel
    touches (padded neighbor tables, concatenated per-node visibility lists,
    optional direction-sector tables).
    """

    def __init__(
        self,
        occ: OccupancyGrid,
        graphs: Sequence[SearchGraph],
        profiles: Sequence[AgentProfile],
        belief: BeliefState,
        dt: float = 1.0,
    ):
        if len(graphs) != len(profiles) or len(profiles) != belief.n_agents:
            raise ValueError("graphs, profiles, and belief agent counts must match")
        self.occ = occ
        self.graphs = list(graphs)
        self.profiles = list(profiles)
        self.belief = belief
        self.dt = float(dt)
        self.n_agents = len(profiles)
        self.n_nodes = self.graphs[0].n_nodes
        self.n_cells = occ.width * occ.height

        self.own_mass = np.stack([np.asarray(arr) for arr in belief.agent_masses])
        self.merged_mass = self.own_mass.sum(axis=0)
        self.total_mass = float(self.merged_mass.sum())

        self.start_nodes = []
        for graph, profile in zip(self.graphs, self.profiles):
            if graph.n_active == 0:
                raise EmptySubgraphError(f"agent {profile.id}: empty subgraph")
            self.start_nodes.append(graph.nearest_node(*profile.start))

        self.neighbors = [
            [graph.neighbors(i) for i in range(self.n_nodes)] for graph in self.graphs
        ]
        self.max_degree = max(
            (nb.size for per_agent in self.neighbors for nb in per_agent), default=0
        )
        m, c, d = self.n_agents, self.n_nodes, max(self.max_degree, 1)
        self.nbr_idx = np.zeros((m, c, d), dtype=np.int64)
        self.nbr_cnt = np.zeros((m, c), dtype=np.int64)
        for a in range(m):
            for i in range(c):
                nb = self.neighbors[a][i]
                self.nbr_cnt[a, i] = nb.size
                self.nbr_idx[a, i, : nb.size] = nb
        self.dist3 = np.stack([g.distances for g in self.graphs])

        caches: dict[float, VisibilityCache] = {}
        self.vis_cells: list[list[np.ndarray]] = []
        empty = np.empty(0, dtype=np.int64)
        for graph, profile in zip(self.graphs, self.profiles):
            cache = caches.setdefault(
                profile.visibility_radius, VisibilityCache(occ, profile.visibility_radius)
            )
            cells = [
                cache.cells_for_position(*graph.positions[i]) if graph.active[i] else empty
                for i in range(self.n_nodes)
            ]
            self.vis_cells.append(cells)
        self.vis_caches = caches

        self.vis_ptr = np.zeros((m, c + 1), dtype=np.int64)
        chunks = []
        offset = 0
        for a in range(m):
            for i in range(c):
                cells = self.vis_cells[a][i]
                offset += cells.size
                self.vis_ptr[a, i + 1] = offset
            if a + 1 < m:
                self.vis_ptr[a + 1, 0] = offset
            chunks.extend(self.vis_cells[a])
        self.vis_flat = (
            np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        ).astype(np.int64)

        self._sectors: tuple | None = None

    def with_belief(self, belief: BeliefState) -> "SearchProblem":
        """Same world, graphs, and caches; different mass split."""
        clone = object.__new__(SearchProblem)
        clone.__dict__.update(self.__dict__)
        clone.belief = belief
        clone.own_mass = np.stack([np.asarray(arr) for arr in belief.agent_masses])
        clone.merged_mass = clone.own_mass.sum(axis=0)
        clone.total_mass = float(clone.merged_mass.sum())
        return clone

    # -- directional-mass sectors (for the "mts" heuristic) ----------------

    def sectors(self, params: MMASParams):
        """Flat sector tables: for node i and its k-th global neighbor j,
        ``sec_cat[sec_ptr[i, k] : sec_ptr[i, k + 1]]`` lists the cells within
        ``mts_range_factor * grid_distance`` of i and strictly inside the
        ``mts_half_angle_deg`` cone toward j."""
        if self._sectors is not None:
            return self._sectors
        graph = self.graphs[0]
        union_adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for g in self.graphs:
            union_adj |= g.adjacency
        occ = self.occ
        res = occ.resolution
        rng_m = params.mts_range_factor * graph.grid_distance
        cos_half = math.cos(math.radians(params.mts_half_angle_deg))
        xs = (np.arange(occ.width) + 0.5) * res
        ys = (np.arange(occ.height) + 0.5) * res
        gx, gy = np.meshgrid(xs, ys)
        gx = gx.ravel()
        gy = gy.ravel()
        free = occ.free.ravel()
        deg = union_adj.sum(axis=1)
        dmax = max(int(deg.max()), 1)
        sec_nbrs = np.full((self.n_nodes, dmax), -1, dtype=np.int64)
        sec_deg = np.zeros(self.n_nodes, dtype=np.int64)
        sec_ptr = np.zeros((self.n_nodes, dmax + 1), dtype=np.int64)
        chunks: list[np.ndarray] = []
        offset = 0
        for i in range(self.n_nodes):
            nbrs = np.flatnonzero(union_adj[i]).astype(np.int64)
            sec_deg[i] = nbrs.size
            sec_nbrs[i, : nbrs.size] = nbrs
            px, py = graph.positions[i]
            dx = gx - px
            dy = gy - py
            r = np.hypot(dx, dy)
            in_range = np.flatnonzero((r <= rng_m) & free)
            rr = np.maximum(r[in_range], 1e-12)
            ux = dx[in_range] / rr
            uy = dy[in_range] / rr
            sec_ptr[i, 0] = offset
            for k, j in enumerate(nbrs.tolist()):
                vx, vy = graph.positions[j] - graph.positions[i]
                norm = math.hypot(vx, vy)
                if norm <= 0:
                    sel = in_range
                else:
                    # strictly inside the cone; boundary cells would tie
                    # every adjacent sector
                    sel = in_range[ux * (vx / norm) + uy * (vy / norm) > cos_half + 1e-12]
                chunks.append(sel.astype(np.int64))
                offset += sel.size
                sec_ptr[i, k + 1] = offset
            sec_ptr[i, nbrs.size :] = offset
        sec_cat = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        self._sectors = (sec_nbrs, sec_deg, sec_ptr, sec_cat)
        return self._sectors


# ---------------------------------------------------------------------------
# pheromone updates


def init_pheromones(
    problem: SearchProblem, params: MMASParams, seed_cost: float | None = None
) -> PheromoneField:
    """All trails start at tau_max = 1 / (rho * C_seed); tau_min = tau_max / 2C.

    ``C_seed`` defaults to the objective value of the deterministic greedy
    seed solution.
    """
    if seed_cost is None:
        seed_cost = greedy_seed_solution(problem, params).objective_value
    seed_cost = max(float(seed_cost), params.dt)
    tau_max = 1.0 / (params.rho * seed_cost)
    tau_min = tau_max / (2.0 * max(problem.n_nodes, 1))
    tau3 = np.full((problem.n_agents, problem.n_nodes, problem.n_nodes), tau_max)
    return PheromoneField(tau3, tau_min, tau_max)


def evaporate(field: PheromoneField, params: MMASParams) -> None:
    """tau <- max(tau_min, (1 - rho) * tau), in place."""
    field.tau3 *= 1.0 - params.rho
    np.maximum(field.tau3, field.tau_min, out=field.tau3)


def deposit_best(field: PheromoneField, best: AntSolution, params: MMASParams) -> None:
    """Deposit 1/cost on every arc the best solution traverses (both
    directions, the graph being symmetric), clamped at tau_max."""
    cost = best.objective_value if best.objective_value > 0 else params.dt
    delta = 1.0 / cost
    for m, path in enumerate(best.paths):
        tau = field.tau3[m]
        for a, b in zip(path, path[1:]):
            if a == b:
                continue
            tau[a, b] = min(tau[a, b] + delta, field.tau_max)
            tau[b, a] = min(tau[b, a] + delta, field.tau_max)


# ---------------------------------------------------------------------------
# transition rule


def transition_probabilities(
    field: PheromoneField,
    heuristic: HeuristicField,
    agent: int,
    node: int,
    visited,
    params: MMASParams,
    problem: SearchProblem,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate nodes and their normalized selection probabilities.

    Candidates are the unvisited neighbors of ``node`` in the agent's graph;
    when every neighbor was already visited the full neighbor set is used
    (revisits allowed).
    """
    nbrs = problem.neighbors[agent][node]
    if nbrs.size == 0:
        raise DeadEndError(f"agent {agent}: node {node} has no neighbors")
    visited = np.asarray(visited)
    if visited.dtype == bool:
        unv = nbrs[~visited[nbrs]]
    else:
        unv = nbrs[~np.isin(nbrs, visited)]
    cand = unv if unv.size else nbrs
    tw = field.tau3[agent, node][cand]
    if params.alpha != 1.0:
        tw = np.power(tw, params.alpha)
    w = tw * heuristic.pow_beta(params.beta)[agent, node][cand]
    total = w.sum()
    if total <= 0:
        probs = np.full(cand.size, 1.0 / cand.size)
    else:
        probs = w / total
    return cand, probs


def build_tsp_heuristic(problem: SearchProblem) -> HeuristicField:
    """eta = 1/d on every arc, identical for all agents (on shared arcs)."""
    values = []
    for graph in problem.graphs:
        eta = np.zeros_like(graph.distances)
        mask = graph.adjacency
        eta[mask] = 1.0 / graph.distances[mask]
        values.append(eta)
    return HeuristicField("tsp", values)


def mts_heuristic(
    problem: SearchProblem, params: MMASParams, state: BeliefState | None = None
) -> HeuristicField:
    """Directional-mass heuristic: eta for arc (i, j) is epsilon plus the
    agent's remaining assigned mass inside a sector of the configured
    half-angle and range, pointed from node i toward node j.

    During construction this quantity is re-derived from the evolving
    remaining mass at every decision; this function evaluates the full field
    for a given belief state.
    """
    if state is None:
        state = problem.belief
    sec_nbrs, sec_deg, sec_ptr, sec_cat = problem.sectors(params)
    values = []
    for m in range(problem.n_agents):
        own = np.asarray(state.agent_masses[m])
        eta = np.zeros((problem.n_nodes, problem.n_nodes))
        for i in range(problem.n_nodes):
            for k in range(int(sec_deg[i])):
                j = int(sec_nbrs[i, k])
                lo, hi = int(sec_ptr[i, k]), int(sec_ptr[i, k + 1])
                eta[i, j] = params.mts_epsilon + (own[sec_cat[lo:hi]].sum() if hi > lo else 0.0)
        masked = np.where(problem.graphs[m].adjacency, eta, 0.0)
        values.append(masked)
    return HeuristicField("mts", values)


# ---------------------------------------------------------------------------
# solution construction


def _finalize(
    problem: SearchProblem,
    paths: list[list[int]],
    dist,
    first_own: np.ndarray,
    remaining: float,
    params: MMASParams,
) -> AntSolution:
    n = params.horizon if params.horizon is not None else max(len(p) for p in paths)
    fu = np.min(first_own, axis=0) if problem.n_agents > 1 else first_own[0]
    seen = fu != _UNSEEN
    p_steps = np.bincount(fu[seen], weights=problem.merged_mass[seen], minlength=n + 1)[1 : n + 1]
    cum = np.cumsum(p_steps)
    et = float((n - cum.sum()) * params.dt)
    residual = float(1.0 - (cum[-1] if n else 0.0))
    gains = np.zeros(n + 1)
    for m in range(problem.n_agents):
        fo = first_own[m]
        sel = fo != _UNSEEN
        if sel.any():
            gains += np.bincount(fo[sel], weights=problem.own_mass[m][sel], minlength=n + 1)[
                : n + 1
            ]
    own_cum = np.cumsum(gains[1:])
    est = float((n - own_cum.sum()) * params.dt)
    own_residual = float(1.0 - (own_cum[-1] if n else 0.0))
    # objective: same survival sum held out to the fixed cap horizon
    tail = max(_step_cap(problem, params) - n, 0) * params.dt
    if params.objective == OBJECTIVE_ASSIGNED:
        objective = est + own_residual * tail
    else:
        objective = et + residual * tail
    complete = remaining <= params.residual_target + 1e-12
    return AntSolution(
        paths=tuple(tuple(int(v) for v in p) for p in paths),
        est=est,
        et=et,
        residual=residual,
        own_residual=own_residual,
        path_distances=tuple(float(d) for d in dist),
        complete=complete,
        objective_value=float(objective),
    )


def _step_cap(problem: SearchProblem, params: MMASParams) -> int:
    if params.horizon is not None:
        return max(int(params.horizon), 1)
    return max(params.step_cap_factor * problem.n_nodes, 1)


def _draw_budget(problem: SearchProblem, params: MMASParams) -> int:
    return 3 * (problem.n_agents * _step_cap(problem, params) + problem.n_agents + 4)


def greedy_seed_solution(problem: SearchProblem, params: MMASParams) -> AntSolution:
    """Deterministic seed: always extend the shortest-path agent toward the
    neighbor revealing the most uncovered mass (ties: nearer, lower id)."""
    m_agents = problem.n_agents
    covered = np.zeros(problem.n_cells, dtype=bool)
    first_own = np.full((m_agents, problem.n_cells), _UNSEEN, dtype=np.int32)
    remaining = problem.total_mass
    paths = [[problem.start_nodes[m]] for m in range(m_agents)]
    dist = [0.0] * m_agents
    visited = [np.zeros(problem.n_nodes, dtype=bool) for _ in range(m_agents)]

    def place(m: int, node: int, t: int) -> None:
        nonlocal remaining
        cells = problem.vis_cells[m][node]
        if cells.size == 0:
            return
        fo = first_own[m]
        own_new = cells[fo[cells] == _UNSEEN]
        if own_new.size:
            fo[own_new] = t
            fresh = own_new[~covered[own_new]]
            if fresh.size:
                remaining -= float(problem.merged_mass[fresh].sum())
                covered[fresh] = True

    def unseen_gain(m: int, node: int) -> float:
        cells = problem.vis_cells[m][node]
        if cells.size == 0:
            return 0.0
        return float(problem.merged_mass[cells[~covered[cells]]].sum())

    for m in range(m_agents):
        visited[m][paths[m][0]] = True
        place(m, paths[m][0], 1)
    cap = _step_cap(problem, params)
    extendable = [problem.neighbors[m][paths[m][-1]].size > 0 for m in range(m_agents)]
    while remaining > params.residual_target + 1e-12:
        order = [m for m in range(m_agents) if extendable[m] and len(paths[m]) < cap]
        if not order:
            break
        m = min(order, key=lambda a: (dist[a], a))
        i = paths[m][-1]
        nbrs = problem.neighbors[m][i]
        unv = nbrs[~visited[m][nbrs]]
        cand = unv if unv.size else nbrs
        d_row = problem.graphs[m].distances[i]
        best = min(((-unseen_gain(m, int(j)), d_row[j], int(j)) for j in cand))
        j = best[2]
        paths[m].append(j)
        visited[m][j] = True
        dist[m] += d_row[j]
        place(m, j, len(paths[m]))
        extendable[m] = problem.neighbors[m][j].size > 0
    return _finalize(problem, paths, dist, first_own, remaining, params)


def _construct_python(
    problem: SearchProblem,
    tau3: np.ndarray,
    eta_pow: np.ndarray | None,
    sectors,
    params: MMASParams,
    uniforms: np.ndarray,
):
    """Reference construction; consumes ``uniforms`` exactly like the kernel."""
    m_agents = problem.n_agents
    cap = _step_cap(problem, params)
    covered = np.zeros(problem.n_cells, dtype=bool)
    first_own = np.full((m_agents, problem.n_cells), _UNSEEN, dtype=np.int32)
    own_rem = problem.own_mass.copy()
    remaining = problem.total_mass
    paths = [[problem.start_nodes[m]] for m in range(m_agents)]
    lengths = [1] * m_agents
    dist = [0.0] * m_agents
    visited = np.zeros((m_agents, problem.n_nodes), dtype=bool)
    use_mts = params.heuristic == "mts"
    if use_mts:
        sec_nbrs, sec_deg, sec_ptr, sec_cat = sectors
    alpha = params.alpha
    beta = params.beta
    eps = params.mts_epsilon
    stop_at = params.residual_target + 1e-12
    u = 0

    def place(m: int, node: int, t: int) -> None:
        nonlocal remaining
        cells = problem.vis_cells[m][node]
        if cells.size == 0:
            return
        fo = first_own[m]
        own_new = cells[fo[cells] == _UNSEEN]
        if own_new.size:
            fo[own_new] = t
            own_rem[m][own_new] = 0.0
            fresh = own_new[~covered[own_new]]
            if fresh.size:
                remaining -= float(problem.merged_mass[fresh].sum())
                covered[fresh] = True

    for m in range(m_agents):
        visited[m, paths[m][0]] = True
        place(m, paths[m][0], 1)

    while remaining > stop_at:
        order = [
            m
            for m in range(m_agents)
            if lengths[m] < cap and problem.nbr_cnt[m, paths[m][-1]] > 0
        ]
        if not order:
            break
        if len(order) == 1:
            m = order[0]
        else:
            shortest = order[0]
            for a in order[1:]:
                if dist[a] < dist[shortest]:
                    shortest = a
            if uniforms[u] < params.shortest_agent_prob:
                u += 1
                m = shortest
            else:
                u += 1
                others = [a for a in order if a != shortest]
                m = others[min(int(uniforms[u] * len(others)), len(others) - 1)]
                u += 1

        i = paths[m][-1]
        nbrs = problem.neighbors[m][i]
        unv = nbrs[~visited[m][nbrs]]
        cand = unv if unv.size else nbrs
        tw = tau3[m, i][cand]
        if alpha != 1.0:
            tw = np.power(tw, alpha)
        if use_mts:
            ew = np.empty(cand.size)
            for k, j in enumerate(cand.tolist()):
                acc = eps
                for s_k in range(int(sec_deg[i])):
                    if sec_nbrs[i, s_k] == j:
                        lo, hi = int(sec_ptr[i, s_k]), int(sec_ptr[i, s_k + 1])
                        if hi > lo:
                            acc += own_rem[m][sec_cat[lo:hi]].sum()
                        break
                ew[k] = acc**beta
        else:
            ew = eta_pow[m, i][cand]
        w = tw * ew
        total = float(w.sum())
        if total <= 0 or not math.isfinite(total):
            j = int(cand[min(int(uniforms[u] * cand.size), cand.size - 1)])
            u += 1
        else:
            r = uniforms[u] * total
            u += 1
            acc = 0.0
            j = int(cand[-1])
            for k in range(cand.size):
                acc += w[k]
                if acc >= r:
                    j = int(cand[k])
                    break
        paths[m].append(j)
        lengths[m] += 1
        visited[m, j] = True
        dist[m] += problem.dist3[m, i, j]
        place(m, j, lengths[m])

    return paths, dist, first_own, remaining


# -- numba kernel ------------------------------------------------------------

_KERNEL = None
_KERNEL_DISABLED = bool(os.environ.get("SEARCHPLAN_NO_NUMBA"))


def _get_kernel():
    """Compile the construction kernel once (numpy fallback if numba missing)."""
    global _KERNEL, _KERNEL_DISABLED
    if _KERNEL is not None or _KERNEL_DISABLED:
        return _KERNEL
    try:
        import numba as nb
    except ImportError:
        _KERNEL_DISABLED = True
        return None

    @nb.njit(cache=True, fastmath=False)
    def kernel(
        start_nodes,
        nbr_idx,
        nbr_cnt,
        dist3,
        tau3,
        eta_pow,
        use_mts,
        sec_nbrs,
        sec_deg,
        sec_ptr,
        sec_cat,
        vis_flat,
        vis_ptr,
        merged,
        own_rem,
        first_own,
        alpha,
        beta,
        eps,
        cap,
        stop_at,
        p_short,
        total_mass,
        uniforms,
        paths_out,
        dists_out,
    ):
        m_agents = start_nodes.shape[0]
        n_nodes = nbr_cnt.shape[1]
        n_cells = merged.shape[0]
        covered = np.zeros(n_cells, dtype=nb.boolean)
        visited = np.zeros((m_agents, n_nodes), dtype=nb.boolean)
        lengths = np.ones(m_agents, dtype=np.int64)
        order = np.empty(m_agents, dtype=np.int64)
        cand = np.empty(nbr_idx.shape[2], dtype=np.int64)
        wbuf = np.empty(nbr_idx.shape[2], dtype=np.float64)
        remaining = total_mass
        u = 0

        for m in range(m_agents):
            node = start_nodes[m]
            paths_out[m, 0] = node
            visited[m, node] = True
            for p in range(vis_ptr[m, node], vis_ptr[m, node + 1]):
                c = vis_flat[p]
                if first_own[m, c] == _UNSEEN:
                    first_own[m, c] = 1
                    own_rem[m, c] = 0.0
                    if not covered[c]:
                        covered[c] = True
                        remaining -= merged[c]

        while remaining > stop_at:
            n_ord = 0
            for m in range(m_agents):
                if lengths[m] < cap and nbr_cnt[m, paths_out[m, lengths[m] - 1]] > 0:
                    order[n_ord] = m
                    n_ord += 1
            if n_ord == 0:
                break
            if n_ord == 1:
                m = order[0]
            else:
                shortest = order[0]
                for k in range(1, n_ord):
                    if dists_out[order[k]] < dists_out[shortest]:
                        shortest = order[k]
                if uniforms[u] < p_short:
                    u += 1
                    m = shortest
                else:
                    u += 1
                    n_others = n_ord - 1
                    pick = int(uniforms[u] * n_others)
                    if pick >= n_others:
                        pick = n_others - 1
                    u += 1
                    seen_others = 0
                    m = shortest
                    for k in range(n_ord):
                        if order[k] != shortest:
                            if seen_others == pick:
                                m = order[k]
                                break
                            seen_others += 1

            i = paths_out[m, lengths[m] - 1]
            cnt = nbr_cnt[m, i]
            n_cand = 0
            for k in range(cnt):
                j = nbr_idx[m, i, k]
                if not visited[m, j]:
                    cand[n_cand] = j
                    n_cand += 1
            if n_cand == 0:
                for k in range(cnt):
                    cand[k] = nbr_idx[m, i, k]
                n_cand = cnt

            total = 0.0
            for k in range(n_cand):
                j = cand[k]
                tw = tau3[m, i, j]
                if alpha != 1.0:
                    tw = tw**alpha
                if use_mts:
                    acc = eps
                    for s_k in range(sec_deg[i]):
                        if sec_nbrs[i, s_k] == j:
                            for p in range(sec_ptr[i, s_k], sec_ptr[i, s_k + 1]):
                                acc += own_rem[m, sec_cat[p]]
                            break
                    ew = acc**beta
                else:
                    ew = eta_pow[m, i, j]
                wbuf[k] = tw * ew
                total += wbuf[k]

            if total <= 0.0 or not np.isfinite(total):
                pick = int(uniforms[u] * n_cand)
                if pick >= n_cand:
                    pick = n_cand - 1
                u += 1
                j = cand[pick]
            else:
                r = uniforms[u] * total
                u += 1
                acc = 0.0
                j = cand[n_cand - 1]
                for k in range(n_cand):
                    acc += wbuf[k]
                    if acc >= r:
                        j = cand[k]
                        break

            paths_out[m, lengths[m]] = j
            visited[m, j] = True
            dists_out[m] += dist3[m, i, j]
            lengths[m] += 1
            t = lengths[m]
            for p in range(vis_ptr[m, j], vis_ptr[m, j + 1]):
                c = vis_flat[p]
                if first_own[m, c] == _UNSEEN:
                    first_own[m, c] = t
                    own_rem[m, c] = 0.0
                    if not covered[c]:
                        covered[c] = True
                        remaining -= merged[c]

        return lengths, remaining

    _KERNEL = kernel
    return _KERNEL


_EMPTY_SECTORS = (
    np.full((1, 1), -1, dtype=np.int64),
    np.zeros(1, dtype=np.int64),
    np.zeros((1, 2), dtype=np.int64),
    np.empty(0, dtype=np.int64),
)


def construct_ant_solution(
    problem: SearchProblem,
    field: PheromoneField,
    heuristic: HeuristicField,
    params: MMASParams,
    rng: np.random.Generator,
) -> AntSolution:
    """Build one multi-agent solution by stochastic arc selection.

    Construction stops once the uncovered mass drops to the residual target
    or every agent hits the step cap (the solution is then flagged
    incomplete).
    """
    uniforms = rng.random(_draw_budget(problem, params))
    use_mts = params.heuristic == "mts"
    sectors = problem.sectors(params) if use_mts else _EMPTY_SECTORS
    eta_pow = None if use_mts else heuristic.pow_beta(params.beta)
    kernel = _get_kernel()
    if kernel is None:
        paths, dist, first_own, remaining = _construct_python(
            problem, field.tau3, eta_pow, sectors, params, uniforms
        )
        return _finalize(problem, paths, dist, first_own, remaining, params)

    cap = _step_cap(problem, params)
    m_agents = problem.n_agents
    paths_out = np.zeros((m_agents, cap), dtype=np.int64)
    dists_out = np.zeros(m_agents, dtype=np.float64)
    first_own = np.full((m_agents, problem.n_cells), _UNSEEN, dtype=np.int32)
    own_rem = problem.own_mass.copy()
    sec_nbrs, sec_deg, sec_ptr, sec_cat = sectors
    lengths, remaining = kernel(
        np.asarray(problem.start_nodes, dtype=np.int64),
        problem.nbr_idx,
        problem.nbr_cnt,
        problem.dist3,
        field.tau3,
        eta_pow if eta_pow is not None else np.zeros((1, 1, 1)),
        use_mts,
        sec_nbrs,
        sec_deg,
        sec_ptr,
        sec_cat,
        problem.vis_flat,
        problem.vis_ptr,
        problem.merged_mass,
        own_rem,
        first_own,
        float(params.alpha),
        float(params.beta),
        float(params.mts_epsilon),
        cap,
        params.residual_target + 1e-12,
        float(params.shortest_agent_prob),
        problem.total_mass,
        uniforms,
        paths_out,
        dists_out,
    )
    paths = [paths_out[m, : lengths[m]].tolist() for m in range(m_agents)]
    return _finalize(problem, paths, dists_out.tolist(), first_own, float(remaining), params)


# ---------------------------------------------------------------------------
# main loop


def optimize(
    problem: SearchProblem,
    params: MMASParams,
    iteration_hook: Callable[[int, PheromoneField, AntSolution], None] | None = None,
) -> tuple[AntSolution, list[float]]:
    """Run the full MMAS loop; returns the best solution and the best-cost
    trace (seed value followed by one entry per iteration, nonincreasing).

    Every ant draws from its own pre-spawned RNG stream, so results are
    identical regardless of construction order.
    """
    ss = np.random.SeedSequence(params.seed)
    children = ss.spawn(1 + params.n_iterations * params.n_ants)
    master = np.random.default_rng(children[0])

    best = greedy_seed_solution(problem, params)
    field = init_pheromones(problem, params, seed_cost=best.objective_value)
    heuristic = (
        mts_heuristic(problem, params) if params.heuristic == "mts" else build_tsp_heuristic(problem)
    )
    if params.heuristic == "tsp":
        heuristic.pow_beta(params.beta)
    trace = [best.objective_value]

    for it in range(params.n_iterations):
        iter_best: AntSolution | None = None
        base = 1 + it * params.n_ants
        for a in range(params.n_ants):
            rng = np.random.default_rng(children[base + a])
            sol = construct_ant_solution(problem, field, heuristic, params, rng)
            if iter_best is None or sol.objective_value < iter_best.objective_value:
                iter_best = sol
        if iter_best.objective_value < best.objective_value:
            best = iter_best
        evaporate(field, params)
        chosen = best if master.random() < params.best_so_far_prob else iter_best
        deposit_best(field, chosen, params)
        trace.append(best.objective_value)
        if iteration_hook is not None:
            iteration_hook(it, field, best)
    return best, trace
