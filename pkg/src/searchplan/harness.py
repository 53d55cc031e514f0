"""Plan execution with moving agents, metric aggregation, and benchmarks."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .belief import equal_split, split_sub_priors
from .colony import (
    OBJECTIVE_ASSIGNED,
    OBJECTIVE_GLOBAL,
    AntSolution,
    MMASParams,
    SearchProblem,
    optimize,
)
from .errors import InvalidSpecError
from .maps import PreferredArea, SearchGraph
from .scenarios import PlanningConfig, Scenario, ScenarioSpec, build_graphs, build_problem, generate_scenario
from .visibility import segment_clear

DEFAULT_TICK = 0.1


@dataclass(frozen=True)
class SimResult:
    """Outcome of one executed search."""

    found_by: int | None
    rst: float  # real search time: detection time, or the timeout if not found
    planned_est: float
    path_distances: tuple[float, ...]
    divergence_distance: float
    computation_time: float
    percent_considered_areas: float

    def to_json(self) -> dict:
        return {
            "found_by": self.found_by,
            "rst": self.rst,
            "planned_est": self.planned_est,
            "path_distances": list(self.path_distances),
            "divergence_distance": self.divergence_distance,
            "computation_time": self.computation_time,
            "percent_considered_areas": self.percent_considered_areas,
        }


@dataclass(frozen=True)
class TickState:
    """State snapshot emitted while a simulated search runs."""

    t: float
    positions: tuple[tuple[float, float], ...]
    found_by: int | None
    finished: bool
    newly_swept: tuple[int, ...] = ()
    cumulative_probability: float = 0.0


class _PolylineWalker:
    """Constant-speed motion along a node polyline."""

    def __init__(self, points: np.ndarray, speed: float):
        self.points = points
        self.speed = float(speed)
        seg = np.diff(points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1]) if len(points) > 1 else np.zeros(0)
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.total = float(self.cum[-1])

    def position(self, t: float) -> tuple[float, float]:
        s = self.speed * t
        if s >= self.total or len(self.points) == 1:
            p = self.points[-1]
            return float(p[0]), float(p[1])
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.seg_len) - 1)
        if self.seg_len[i] <= 0:
            p = self.points[i]
            return float(p[0]), float(p[1])
        frac = (s - self.cum[i]) / self.seg_len[i]
        p = self.points[i] + frac * (self.points[i + 1] - self.points[i])
        return float(p[0]), float(p[1])

    def finished(self, t: float) -> bool:
        return self.speed * t >= self.total


def _point_polyline_distance(x: float, y: float, points: np.ndarray) -> float:
    if len(points) == 1:
        return float(math.hypot(x - points[0, 0], y - points[0, 1]))
    a = points[:-1]
    b = points[1:]
    ab = b - a
    ap = np.array([x, y]) - a
    denom = (ab**2).sum(axis=1)
    tt = np.clip(np.divide((ap * ab).sum(axis=1), denom, where=denom > 0), 0.0, 1.0)
    proj = a + tt[:, None] * ab
    d = np.hypot(proj[:, 0] - x, proj[:, 1] - y)
    return float(d.min())


def simulate_ticks(
    plans: Sequence[Sequence[int]],
    scenario: Scenario,
    graphs: Sequence[SearchGraph],
    speeds: Sequence[float] | None = None,
    timeout: float = 600.0,
    tick: float = DEFAULT_TICK,
    track_belief: bool = False,
) -> Iterator[TickState]:
    """Advance agents along their plans, sensing every tick.

    Terminates at first detection (lowest agent id wins simultaneous
    sightings), when every agent finished its path, or at the timeout.
    With ``track_belief`` each tick also reports the newly swept cells and
    the cumulative swept probability (monotone nondecreasing).
    """
    occ = scenario.occ
    tx, ty = scenario.target_position
    target_cell = scenario.target_cell
    profiles = scenario.profiles
    if speeds is None:
        speeds = [p.speed for p in profiles]
    walkers = [
        _PolylineWalker(graphs[m].positions[np.asarray(plan, dtype=np.int64)], speeds[m])
        for m, plan in enumerate(plans)
    ]
    has_obstacles = bool(occ.occupied.any())
    covered = np.zeros(occ.width * occ.height, dtype=bool) if track_belief else None
    flat_prior = scenario.prior.mass.ravel()
    cum_prob = 0.0

    n_ticks = max(int(math.ceil(timeout / tick)), 1)
    for k in range(n_ticks + 1):
        t = k * tick
        positions = tuple(w.position(t) for w in walkers)
        found_by = None
        for m, (px, py) in enumerate(positions):
            if math.hypot(px - tx, py - ty) <= profiles[m].visibility_radius and (
                not has_obstacles or segment_clear(occ, (px, py), (tx, ty))
            ):
                found_by = m
                break
        newly: tuple[int, ...] = ()
        if track_belief:
            from .visibility import visible_region

            fresh: list[int] = []
            for m, (px, py) in enumerate(positions):
                cells = visible_region(occ, (px, py), profiles[m].visibility_radius).cells
                new = cells[~covered[cells]]
                if new.size:
                    covered[new] = True
                    cum_prob += float(flat_prior[new].sum())
                    fresh.extend(int(c) for c in new)
            newly = tuple(fresh)
        all_done = all(w.finished(t) for w in walkers)
        finished = found_by is not None or all_done or t >= timeout
        yield TickState(t, positions, found_by, finished, newly, cum_prob)
        if finished:
            return


def run_search(
    plans: Sequence[Sequence[int]],
    scenario: Scenario,
    graphs: Sequence[SearchGraph],
    speeds: Sequence[float] | None = None,
    timeout: float = 600.0,
    tick: float = DEFAULT_TICK,
    planned_est: float = 0.0,
    computation_time: float = 0.0,
    areas: Sequence[PreferredArea] | None = None,
) -> SimResult:
    """Execute a plan against the hidden target and aggregate the run metrics."""
    polylines = [
        graphs[m].positions[np.asarray(plan, dtype=np.int64)] for m, plan in enumerate(plans)
    ]
    walkers_len = [float(np.hypot(*np.diff(p, axis=0).T).sum()) if len(p) > 1 else 0.0 for p in polylines]
    dd_samples: list[float] = []
    found_by = None
    rst = timeout
    for state in simulate_ticks(plans, scenario, graphs, speeds, timeout, tick):
        for m, (px, py) in enumerate(state.positions):
            dd_samples.append(_point_polyline_distance(px, py, polylines[m]))
        if state.found_by is not None:
            found_by = state.found_by
            rst = state.t
            break
    ca = percent_considered_areas(plans, graphs, areas) if areas else 0.0
    return SimResult(
        found_by=found_by,
        rst=rst if found_by is not None else timeout,
        planned_est=planned_est,
        path_distances=tuple(walkers_len),
        divergence_distance=float(np.mean(dd_samples)) if dd_samples else 0.0,
        computation_time=computation_time,
        percent_considered_areas=ca,
    )


# ---------------------------------------------------------------------------
# preferred-area coverage


def _segment_rect_interval(p0, p1, rect: PreferredArea) -> tuple[float, float] | None:
    """Parameter interval of segment p0->p1 inside the rectangle (slab clip)."""
    t0, t1 = 0.0, 1.0
    for c0, c1, lo, hi in (
        (p0[0], p1[0], rect.x_min, rect.x_max),
        (p0[1], p1[1], rect.y_min, rect.y_max),
    ):
        d = c1 - c0
        if abs(d) < 1e-15:
            if not (lo <= c0 <= hi):
                return None
        else:
            ta, tb = (lo - c0) / d, (hi - c0) / d
            if ta > tb:
                ta, tb = tb, ta
            t0, t1 = max(t0, ta), min(t1, tb)
            if t0 >= t1:
                return None
    return (t0, t1)


def _union_intervals(intervals: list[tuple[float, float]]) -> float:
    if not intervals:
        return 0.0
    intervals.sort()
    total = 0.0
    cur0, cur1 = intervals[0]
    for a, b in intervals[1:]:
        if a > cur1:
            total += cur1 - cur0
            cur0, cur1 = a, b
        else:
            cur1 = max(cur1, b)
    return total + (cur1 - cur0)


def percent_considered_areas(
    plans: Sequence[Sequence[int]],
    graphs: Sequence[SearchGraph],
    areas: Sequence[PreferredArea] | None,
) -> float:
    """Percent of plan length inside the owning agent's preferred rectangles.

    Only agents that declared areas enter the ratio; with no areas at all the
    result is 0.
    """
    if not areas:
        return 0.0
    by_owner: dict[int, list[PreferredArea]] = {}
    for area in areas:
        by_owner.setdefault(area.owner, []).append(area)
    total = 0.0
    inside = 0.0
    for m, plan in enumerate(plans):
        rects = by_owner.get(m)
        if not rects:
            continue
        pts = graphs[m].positions[np.asarray(plan, dtype=np.int64)]
        for p0, p1 in zip(pts[:-1], pts[1:]):
            seg_len = float(math.hypot(p1[0] - p0[0], p1[1] - p0[1]))
            if seg_len <= 0:
                continue
            total += seg_len
            ivals = [iv for rect in rects if (iv := _segment_rect_interval(p0, p1, rect))]
            inside += seg_len * _union_intervals(ivals)
    if total <= 0:
        return 0.0
    return 100.0 * inside / total


# ---------------------------------------------------------------------------
# benchmark grid


@dataclass(frozen=True)
class BenchSetting:
    """One benchmark cell: a scenario run with a heuristic, with or without
    per-agent preference maps."""

    scenario: ScenarioSpec
    heuristic: str = "tsp"
    subpriors: bool = False
    areas: tuple[PreferredArea, ...] = ()

    @property
    def label(self) -> str:
        return self.scenario.name


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    heuristic: str
    subpriors: bool
    et_mean: float
    et_sd: float
    ct_mean: float
    ct_sd: float
    pd_mean: float
    pd_sd: float

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "heuristic": self.heuristic,
            "subpriors": self.subpriors,
            "ET_mean": self.et_mean,
            "ET_sd": self.et_sd,
            "CT_mean": self.ct_mean,
            "CT_sd": self.ct_sd,
            "PD_mean": self.pd_mean,
            "PD_sd": self.pd_sd,
        }


def run_setting_once(
    setting: BenchSetting,
    seed: int,
    params: MMASParams,
    planning: PlanningConfig = PlanningConfig(),
    problem: SearchProblem | None = None,
) -> tuple[AntSolution, float]:
    """One optimizer run for a benchmark cell; returns (solution, wall seconds)."""
    run_params = replace(
        params,
        seed=seed,
        heuristic=setting.heuristic,
        objective=OBJECTIVE_ASSIGNED if setting.subpriors else OBJECTIVE_GLOBAL,
    )
    if problem is None:
        scenario = generate_scenario(replace(setting.scenario, seed=seed))
        problem = build_problem(
            scenario, planning, areas=setting.areas if setting.subpriors else None, dt=params.dt
        )
    start = time.perf_counter()
    best, _ = optimize(problem, run_params)
    return best, time.perf_counter() - start


def benchmark(
    settings: Sequence[BenchSetting],
    reps: int = 10,
    params: MMASParams = MMASParams(),
    planning: PlanningConfig = PlanningConfig(),
    n_jobs: int = 1,
) -> list[BenchRow]:
    """Mean and sd of ET / CT / PD per setting over seeds 1..reps.

    The same seeds are reused across settings so comparisons are paired.
    Settings sharing a scenario share graphs and visibility caches.
    """
    rows = []
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = {}
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for s_idx, setting in enumerate(settings):
                for seed in range(1, reps + 1):
                    jobs[(s_idx, seed)] = pool.submit(
                        run_setting_once, setting, seed, params, planning
                    )
            results = {k: f.result() for k, f in jobs.items()}
        for s_idx, setting in enumerate(settings):
            runs = [results[(s_idx, seed)] for seed in range(1, reps + 1)]
            rows.append(_aggregate(setting, runs))
        return rows

    # the optimizer never looks at the hidden target, so one problem instance
    # (graphs + visibility caches + mass split) serves every seed of a setting
    for setting in settings:
        scenario = generate_scenario(setting.scenario)
        problem = build_problem(
            scenario, planning, areas=setting.areas if setting.subpriors else None, dt=params.dt
        )
        runs = [
            run_setting_once(setting, seed, params, planning, problem=problem)
            for seed in range(1, reps + 1)
        ]
        rows.append(_aggregate(setting, runs))
    return rows


def _aggregate(setting: BenchSetting, runs: list[tuple[AntSolution, float]]) -> BenchRow:
    ets = np.array([sol.et for sol, _ in runs])
    cts = np.array([ct for _, ct in runs])
    pds = np.array([sum(sol.path_distances) for sol, _ in runs])
    sd = lambda a: float(a.std(ddof=1)) if len(a) > 1 else 0.0
    return BenchRow(
        scenario=setting.label,
        heuristic=setting.heuristic,
        subpriors=setting.subpriors,
        et_mean=float(ets.mean()),
        et_sd=sd(ets),
        ct_mean=float(cts.mean()),
        ct_sd=sd(cts),
        pd_mean=float(pds.mean()),
        pd_sd=sd(pds),
    )


def write_benchmark_csv(rows: Sequence[BenchRow], path: str | Path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["scenario", "heuristic", "subpriors", "ET_mean", "ET_sd", "CT_mean", "CT_sd", "PD_mean", "PD_sd"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.scenario,
                    row.heuristic,
                    "on" if row.subpriors else "off",
                    f"{row.et_mean:.4f}",
                    f"{row.et_sd:.4f}",
                    f"{row.ct_mean:.4f}",
                    f"{row.ct_sd:.4f}",
                    f"{row.pd_mean:.4f}",
                    f"{row.pd_sd:.4f}",
                ]
            )


def experiment_summary(results: Sequence[SimResult], n_agents: int) -> dict:
    """Aggregate executed-search metrics in the style of a field report:
    detection shares per agent, real search time, divergence, coverage of
    preferred areas."""
    n = len(results)
    if n == 0:
        raise InvalidSpecError("no results to summarize")
    rst = np.array([r.rst for r in results])
    dd = np.array([r.divergence_distance for r in results])
    ca = np.array([r.percent_considered_areas for r in results])
    found = [r.found_by for r in results]
    out = {
        "runs": n,
        "rst_mean": float(rst.mean()),
        "rst_sd": float(rst.std(ddof=1)) if n > 1 else 0.0,
        "pct_not_found": 100.0 * sum(1 for f in found if f is None) / n,
        "dd_mean": float(dd.mean()),
        "dd_sd": float(dd.std(ddof=1)) if n > 1 else 0.0,
        "ca_mean": float(ca.mean()),
    }
    for m in range(n_agents):
        out[f"pct_found_by_{m}"] = 100.0 * sum(1 for f in found if f == m) / n
    return out
