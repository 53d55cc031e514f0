"""Session service for the two-phase collaborative search protocol.

Flow: create a session, request a first plan, optionally submit preferred
rectangles and replan, confirm by starting the run, follow it on the event
stream, and report "object found" from the console. Sessions live in memory;
``Session.snapshot()`` serializes one to JSON on demand.
"""

from __future__ import annotations

import json
import math
import queue
import secrets
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .colony import AntSolution, MMASParams, SearchProblem, optimize
from .errors import EmptyAgentPriorError, InvalidSpecError, PlanningError
from .harness import percent_considered_areas, simulate_ticks
from .maps import PreferredArea
from .scenarios import PlanningConfig, Scenario, ScenarioSpec, build_graphs, build_problem

PHASES = ("created", "planned", "areas_submitted", "replanned", "running", "finished")


@dataclass(frozen=True)
class ServiceConfig:
    default_params: MMASParams = MMASParams(n_ants=10, n_iterations=300)
    planning: PlanningConfig = PlanningConfig()
    cors_origins: tuple[str, ...] = ()


class RectangleModel(BaseModel):
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    owner: int

    def to_area(self) -> PreferredArea:
        return PreferredArea(self.x_min, self.y_min, self.x_max, self.y_max, self.owner)


class ParamsModel(BaseModel):
    ants: int | None = None
    iters: int | None = None
    alpha: float | None = None
    beta: float | None = None
    rho: float | None = None
    residual: float | None = None
    seed: int | None = None
    heuristic: str | None = None
    dt: float | None = None

    def merge(self, base: MMASParams) -> MMASParams:
        updates = {}
        mapping = {
            "ants": "n_ants",
            "iters": "n_iterations",
            "alpha": "alpha",
            "beta": "beta",
            "rho": "rho",
            "residual": "residual_target",
            "seed": "seed",
            "heuristic": "heuristic",
            "dt": "dt",
        }
        for name, target in mapping.items():
            value = getattr(self, name)
            if value is not None:
                updates[target] = value
        return replace(base, **updates) if updates else base


class CreateSessionModel(BaseModel):
    scenario: dict
    params: ParamsModel | None = None


class PlanRequestModel(BaseModel):
    params: ParamsModel | None = None


class ReplanRequestModel(BaseModel):
    areas: list[RectangleModel] = Field(default_factory=list)
    params: ParamsModel | None = None


class StartRequestModel(BaseModel):
    speeds: list[float] | None = None
    timeout: float = 600.0
    tick: float = 0.1
    realtime: bool = True
    emit_every: int = 5


class Session:
    """One collaborative search session and its phase machine."""

    def __init__(self, scenario: Scenario, config: ServiceConfig, params: MMASParams):
        self.id = secrets.token_hex(8)
        self.scenario = scenario
        self.config = config
        self.params = params
        self.phase = "created"
        self.graph, self.graphs = build_graphs(scenario, config.planning)
        self.areas: list[PreferredArea] = []
        self.plan: AntSolution | None = None
        self.trace: list[float] = []
        self.percent_areas = 0.0
        self.result: dict | None = None
        self.lock = threading.Lock()  # serializes commands / optimizer jobs
        self._subscribers: list[queue.Queue] = []
        self._events: list[dict] = []
        self._human_found = threading.Event()
        self._runner: threading.Thread | None = None

    # -- events -------------------------------------------------------------

    def publish(self, event: dict) -> None:
        self._events.append(event)
        for q in list(self._subscribers):
            q.put(event)

    def subscribe(self) -> tuple[list[dict], queue.Queue]:
        q: queue.Queue = queue.Queue()
        self._subscribers.append(q)
        return list(self._events), q

    # -- phase machine ------------------------------------------------------

    def require_phase(self, *allowed: str) -> None:
        if self.phase not in allowed:
            raise HTTPException(
                status_code=409,
                detail=f"command not allowed in phase '{self.phase}' (needs {allowed})",
            )

    # -- commands -----------------------------------------------------------

    def run_plan(self, params: MMASParams, areas: Sequence[PreferredArea]) -> dict:
        problem = build_problem(
            self.scenario,
            self.config.planning,
            areas=list(areas) or None,
            dt=params.dt,
            graphs=self.graphs,
        )
        params = replace(params, objective="assigned" if areas else "global")
        best, trace = optimize(problem, params)
        self.plan = best
        self.trace = trace
        self.percent_areas = percent_considered_areas(
            [list(p) for p in best.paths], self.graphs, list(areas)
        )
        return self.plan_payload()

    def plan_payload(self) -> dict:
        assert self.plan is not None
        payload = self.plan.to_json(self.graphs)
        payload["phase"] = self.phase
        payload["trace"] = self.trace
        payload["percent_considered_areas"] = self.percent_areas
        payload["areas"] = [a.to_json() for a in self.areas]
        return payload

    def start(self, req: StartRequestModel) -> None:
        plans = [list(p) for p in self.plan.paths]
        speeds = req.speeds or [p.speed for p in self.scenario.profiles]
        if len(speeds) != len(plans):
            raise HTTPException(status_code=400, detail="speeds must list one value per agent")

        def runner():
            polylines = [
                self.graphs[m].positions[np.asarray(plan, dtype=np.int64)]
                for m, plan in enumerate(plans)
            ]
            dd_samples: list[float] = []
            found_by = None
            rst = req.timeout
            outcome = "not_found"
            t_end = 0.0
            for k, state in enumerate(
                simulate_ticks(
                    plans,
                    self.scenario,
                    self.graphs,
                    speeds=speeds,
                    timeout=req.timeout,
                    tick=req.tick,
                    track_belief=True,
                )
            ):
                t_end = state.t
                from .harness import _point_polyline_distance

                for m, (px, py) in enumerate(state.positions):
                    dd_samples.append(_point_polyline_distance(px, py, polylines[m]))
                if k % max(req.emit_every, 1) == 0 or state.finished:
                    self.publish(
                        {
                            "type": "state",
                            "t": state.t,
                            "agents": [list(p) for p in state.positions],
                            "cumulative_probability": state.cumulative_probability,
                            "swept_cells": list(state.newly_swept),
                        }
                    )
                if self._human_found.is_set():
                    outcome = "human_found_reported"
                    rst = state.t
                    break
                if state.found_by is not None:
                    found_by = state.found_by
                    rst = state.t
                    outcome = "robot_found"
                    break
                if state.finished:
                    break
                if req.realtime:
                    time.sleep(req.tick)
            if outcome == "not_found":
                rst = req.timeout
            self.result = {
                "outcome": outcome,
                "found_by": found_by,
                "rst": rst,
                "elapsed": t_end,
                "divergence_distance": float(np.mean(dd_samples)) if dd_samples else 0.0,
                "percent_considered_areas": self.percent_areas,
                "planned_expected_time": self.plan.et,
                "planned_assigned_expected_time": self.plan.est,
                "residual": self.plan.residual,
            }
            self.phase = "finished"
            self.publish({"type": "terminal", "outcome": outcome, "t": rst, "found_by": found_by})

        self._runner = threading.Thread(target=runner, daemon=True)
        self._runner.start()

    def report_found(self) -> None:
        self._human_found.set()
        if self._runner is not None:
            self._runner.join(timeout=10.0)

    def snapshot(self) -> dict:
        """Full session state as JSON (on-demand persistence)."""
        return {
            "id": self.id,
            "phase": self.phase,
            "scenario": self.scenario.spec.to_json(),
            "areas": [a.to_json() for a in self.areas],
            "plan": self.plan.to_json(self.graphs) if self.plan else None,
            "result": self.result,
            "events": list(self._events),
        }


def create_app(config: ServiceConfig = ServiceConfig()) -> FastAPI:
    app = FastAPI(title="search planning sessions")
    if config.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions
    app.state.config = config

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return session

    @app.post("/sessions")
    def create_session(body: CreateSessionModel) -> dict:
        try:
            spec = ScenarioSpec.from_json(body.scenario)
            scenario = generate_scenario_checked(spec)
        except (InvalidSpecError, PlanningError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        params = (body.params or ParamsModel()).merge(config.default_params)
        session = Session(scenario, config, params)
        sessions[session.id] = session
        return {"id": session.id, "phase": session.phase}

    @app.get("/sessions/{session_id}/map")
    def get_map(session_id: str) -> dict:
        session = get_session(session_id)
        payload = session.scenario.seg.to_json()
        payload["obstacle_classes"] = sorted(session.scenario.spec.obstacle_classes)
        payload["agents"] = [p.to_json() for p in session.scenario.profiles]
        return payload

    @app.get("/sessions/{session_id}/prior")
    def get_prior(session_id: str) -> dict:
        return get_session(session_id).scenario.prior.to_json()

    @app.post("/sessions/{session_id}/plan")
    def request_plan(session_id: str, body: PlanRequestModel | None = None) -> dict:
        session = get_session(session_id)
        with session.lock:
            session.require_phase("created", "planned")
            params = ((body and body.params) or ParamsModel()).merge(session.params)
            try:
                payload = session.run_plan(params, areas=[])
            except PlanningError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            session.phase = "planned"
            payload["phase"] = session.phase
            return payload

    @app.post("/sessions/{session_id}/areas:replan")
    def submit_areas_and_replan(session_id: str, body: ReplanRequestModel) -> dict:
        session = get_session(session_id)
        with session.lock:
            session.require_phase("planned", "areas_submitted", "replanned")
            session.phase = "areas_submitted"
            areas = [r.to_area() for r in body.areas]
            session.areas = areas
            params = ((body and body.params) or ParamsModel()).merge(session.params)
            try:
                payload = session.run_plan(params, areas=areas)
            except EmptyAgentPriorError as exc:
                session.phase = "areas_submitted"
                raise HTTPException(
                    status_code=422,
                    detail=f"{exc} (draw larger rectangles so every agent receives mass)",
                ) from exc
            except PlanningError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            session.phase = "replanned"
            payload["phase"] = session.phase
            return payload

    @app.post("/sessions/{session_id}/start")
    def start(session_id: str, body: StartRequestModel | None = None) -> dict:
        session = get_session(session_id)
        with session.lock:
            session.require_phase("planned", "replanned")
            session.start(body or StartRequestModel())
            session.phase = "running"
            return {"id": session.id, "phase": session.phase}

    @app.post("/sessions/{session_id}/found")
    def human_found(session_id: str) -> dict:
        session = get_session(session_id)
        session.require_phase("running")
        session.report_found()
        return {"id": session.id, "phase": session.phase, "outcome": "human_found_reported"}

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str) -> StreamingResponse:
        session = get_session(session_id)

        def stream() -> Iterator[bytes]:
            history, q = session.subscribe()
            try:
                for event in history:
                    yield _sse(event)
                    if event.get("type") == "terminal":
                        return
                while True:
                    try:
                        event = q.get(timeout=30.0)
                    except queue.Empty:
                        yield b": keep-alive\n\n"
                        continue
                    yield _sse(event)
                    if event.get("type") == "terminal":
                        return
            finally:
                if q in session._subscribers:
                    session._subscribers.remove(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/sessions/{session_id}/result")
    def result(session_id: str) -> dict:
        session = get_session(session_id)
        session.require_phase("finished")
        return session.result

    return app


def generate_scenario_checked(spec: ScenarioSpec) -> Scenario:
    from .scenarios import generate_scenario

    return generate_scenario(spec)


def _sse(event: dict) -> bytes:
    return f"event: {event.get('type', 'message')}\ndata: {json.dumps(event)}\n\n".encode()
