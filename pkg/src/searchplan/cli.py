"""``plan`` command line: graph building, optimization, benchmarks, simulation, serving."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from .belief import equal_split, split_sub_priors
from .colony import MMASParams, optimize
from .errors import PlanningError
from .harness import (
    BenchSetting,
    benchmark,
    experiment_summary,
    percent_considered_areas,
    run_search,
    simulate_ticks,
    write_benchmark_csv,
)
from .maps import (
    AgentProfile,
    PreferredArea,
    SearchGraph,
    build_graph,
    derive_occupancy,
    load_agents,
    load_prior,
    load_segmented_map,
    sample_nodes,
)
from .scenarios import (
    OBSTACLE_CLASSES_DEFAULT,
    PlanningConfig,
    Scenario,
    ScenarioSpec,
    build_graphs,
    build_problem,
    generate_scenario,
)


def _classes_arg(text: str) -> frozenset[int]:
    if not text.strip():
        return frozenset()
    return frozenset(int(t) for t in text.split(","))


def _load_areas(path: str | None) -> list[PreferredArea]:
    if not path:
        return []
    data = json.loads(Path(path).read_text())
    entries = data["areas"] if isinstance(data, dict) else data
    return [PreferredArea.from_json(e) for e in entries]


def _planning_from_args(args) -> PlanningConfig:
    return PlanningConfig(
        grid_distance=args.grid_distance,
        neighborhood=args.neighborhood,
        clearance=args.clearance,
    )


def _add_planning_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-distance", type=float, default=3.5, help="sampling square side [m]")
    p.add_argument("--neighborhood", type=int, default=7, help="odd arc window in squares")
    p.add_argument("--clearance", type=float, default=0.40, help="obstacle clearance at centroids [m]")


def cmd_build_graph(args) -> int:
    seg = load_segmented_map(args.map)
    occ = derive_occupancy(seg, _classes_arg(args.obstacle_classes))
    nodes = sample_nodes(occ, args.grid_distance, args.clearance)
    graph = build_graph(nodes, occ, args.neighborhood, args.grid_distance)
    Path(args.out).write_text(json.dumps(graph.to_json()))
    print(f"wrote {args.out}: {graph.n_nodes} nodes, {sum(1 for _ in graph.arcs())} arcs")
    return 0


def _scenario_from_args(args) -> Scenario:
    if getattr(args, "scenario", None):
        return generate_scenario(ScenarioSpec.load(args.scenario))
    seg = load_segmented_map(args.map)
    occ = derive_occupancy(seg, _classes_arg(args.obstacle_classes))
    prior = load_prior(args.prior, seg.resolution).normalized()
    profiles = tuple(load_agents(args.agents))
    spec = ScenarioSpec(
        name=Path(args.map).stem,
        map_source=f"file:{args.map}",
        resolution=seg.resolution,
        obstacle_classes=_classes_arg(args.obstacle_classes),
        agents=profiles,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    flat = prior.mass.ravel()
    target = int(rng.choice(flat.size, p=flat / flat.sum()))
    return Scenario(spec, seg, occ, prior, profiles, target)


def cmd_optimize(args) -> int:
    scenario = _scenario_from_args(args)
    planning = _planning_from_args(args)
    areas = _load_areas(args.areas)
    params = MMASParams(
        alpha=args.alpha,
        beta=args.beta,
        rho=args.rho,
        n_ants=args.ants,
        n_iterations=args.iters,
        residual_target=args.residual,
        seed=args.seed,
        heuristic=args.heuristic,
        objective="assigned" if (areas or args.objective == "assigned") else args.objective,
        dt=args.dt,
    )
    problem = build_problem(scenario, planning, areas=areas or None, dt=args.dt)
    start = time.perf_counter()
    best, trace = optimize(problem, params)
    ct = time.perf_counter() - start
    payload = best.to_json(problem.graphs)
    payload["trace"] = trace
    payload["computation_time"] = ct
    payload["percent_considered_areas"] = percent_considered_areas(
        [list(p) for p in best.paths], problem.graphs, areas
    )
    payload["planning"] = {
        "grid_distance": planning.grid_distance,
        "neighborhood": planning.neighborhood,
        "clearance": planning.clearance,
        "dt": args.dt,
    }
    Path(args.out).write_text(json.dumps(payload))
    print(
        f"wrote {args.out}: expected time {best.et:.2f}, assigned {best.est:.2f}, "
        f"residual {best.residual:.4f}, {ct:.1f}s"
    )
    if args.plot:
        figures.plot_plan(
            scenario.occ, scenario.prior, problem.graphs, best, args.plot, areas=areas
        )
        trace_path = Path(args.plot).with_suffix("")
        figures.plot_convergence(trace, f"{trace_path}_trace.png")
        print(f"wrote {args.plot} and {trace_path}_trace.png")
    return 0


def cmd_bench(args) -> int:
    data = json.loads(Path(args.spec).read_text())
    settings = []
    for entry in data["settings"]:
        settings.append(
            BenchSetting(
                scenario=ScenarioSpec.from_json(entry["scenario"]),
                heuristic=entry.get("heuristic", "tsp"),
                subpriors=bool(entry.get("subpriors", False)),
                areas=tuple(PreferredArea.from_json(a) for a in entry.get("areas", [])),
            )
        )
    p = data.get("params", {})
    params = MMASParams(
        alpha=p.get("alpha", 1.0),
        beta=p.get("beta", 6.0),
        rho=p.get("rho", 0.002),
        n_ants=p.get("ants", 10),
        n_iterations=p.get("iters", 400),
        residual_target=p.get("residual", 0.014),
        dt=p.get("dt", 1.0),
    )
    pl = data.get("planning", {})
    planning = PlanningConfig(
        grid_distance=pl.get("grid_distance", 3.5),
        neighborhood=pl.get("neighborhood", 7),
        clearance=pl.get("clearance", 0.40),
    )
    rows = benchmark(settings, reps=args.reps, params=params, planning=planning, n_jobs=args.jobs)
    write_benchmark_csv(rows, args.out)
    made = figures.plot_benchmark(rows, Path(args.out).with_suffix(""))
    print(f"wrote {args.out} and {', '.join(str(m) for m in made)}")
    for row in rows:
        print(
            f"  {row.scenario:>12} {row.heuristic:>4} {'S' if row.subpriors else '-'} "
            f"ET {row.et_mean:8.2f} +/- {row.et_sd:6.2f}  CT {row.ct_mean:6.2f}  PD {row.pd_mean:8.1f}"
        )
    return 0


def cmd_simulate(args) -> int:
    plan_data = json.loads(Path(args.plan).read_text())
    scenario_spec = ScenarioSpec.load(args.scenario)
    if args.seed is not None:
        scenario_spec = replace(scenario_spec, seed=args.seed)
    scenario = generate_scenario(scenario_spec)
    pl = plan_data.get("planning", {})
    planning = PlanningConfig(
        grid_distance=pl.get("grid_distance", 3.5),
        neighborhood=pl.get("neighborhood", 7),
        clearance=pl.get("clearance", 0.40),
    )
    _, graphs = build_graphs(scenario, planning)
    plans = [entry["nodes"] for entry in sorted(plan_data["agents"], key=lambda e: e["id"])]
    result = run_search(
        plans,
        scenario,
        graphs,
        timeout=args.timeout,
        tick=args.tick,
        planned_est=plan_data.get("assigned_expected_time", 0.0),
    )
    print(json.dumps(result.to_json(), indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_json()))
    if args.plot:
        trajectory = [[] for _ in plans]
        for state in simulate_ticks(plans, scenario, graphs, timeout=args.timeout, tick=args.tick):
            for m, pos in enumerate(state.positions):
                trajectory[m].append(pos)
        figures.plot_run(
            scenario.occ, scenario.prior, graphs, plans, trajectory,
            scenario.target_position, args.plot,
        )
        print(f"wrote {args.plot}")
    return 0


def cmd_scenario(args) -> int:
    spec = ScenarioSpec.load(args.spec)
    scenario = generate_scenario(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "map.json").write_text(json.dumps(scenario.seg.to_json()))
    (out / "prior.json").write_text(json.dumps(scenario.prior.to_json()))
    (out / "agents.json").write_text(
        json.dumps({"agents": [p.to_json() for p in scenario.profiles]})
    )
    print(f"wrote map.json, prior.json, agents.json to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        cors_origins=tuple(args.cors_origin or ()),
        default_params=MMASParams(n_ants=args.ants, n_iterations=args.iters),
    )
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="sample nodes and write the search graph")
    p.add_argument("--map", required=True)
    p.add_argument("--obstacle-classes", default="1,10")
    _add_planning_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("optimize", help="compute search paths for all agents")
    p.add_argument("--map")
    p.add_argument("--prior")
    p.add_argument("--agents")
    p.add_argument("--scenario", help="scenario spec JSON (alternative to map/prior/agents)")
    p.add_argument("--obstacle-classes", default="1,10")
    p.add_argument("--areas", help="preferred areas JSON enabling per-agent assignment")
    p.add_argument("--ants", type=int, default=10)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=6.0)
    p.add_argument("--rho", type=float, default=0.002)
    p.add_argument("--residual", type=float, default=0.014)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--heuristic", choices=("tsp", "mts"), default="tsp")
    p.add_argument("--objective", choices=("global", "assigned"), default="global")
    p.add_argument("--dt", type=float, default=1.0)
    _add_planning_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also render the plan figure to this file")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("bench", help="run a benchmark grid, write CSV + figures")
    p.add_argument("--spec", required=True)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("simulate", help="execute a plan against a hidden target")
    p.add_argument("--plan", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--tick", type=float, default=0.1)
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scenario", help="materialize a scenario spec into map/prior/agents files")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("serve", help="run the session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cors-origin", action="append")
    p.add_argument("--ants", type=int, default=10)
    p.add_argument("--iters", type=int, default=300)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
