"""Decision-support service: live planning sessions over scenarios.

The core logic lives in PlannerService (plain Python, fully testable
without HTTP); create_app wraps it in a FastAPI application exposing
the REST endpoints and a per-session server-sent event stream.

Sessions own a shrinking-horizon planning loop: every operator state
update advances time, warm-starts from the previous trajectory and
re-solves to the fixed arrival time.  Plans are append-only history;
replaying the same updates against a fresh service reproduces the same
plans byte for byte.
"""


import json
import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .envfield import error_stats, fit_env_model, parse_samples
from .errors import (
    BuildError,
    FerryPlanError,
    HorizonExpiredError,
    PlanFailedError,
    SessionComplete,
)
from .model import State
from .scenarios import Scenario
from .solver import SolverConfig, solve
from .transcription import OcpSpec, TrajectoryPlan, build_nlp, extract_plan, initial_guess, shrink

DEFAULT_SOLVER_CONFIG = SolverConfig(
    # stationarity lives in joules per scaled step; the gradient norm of a
    # crossing problem is ~50, so 0.3 is a relative tolerance of ~6e-3 and
    # an energy suboptimality far below every acceptance margin
    kkt_tolerance=0.3,
    constraint_tolerance=1e-7,
    max_iterations=200,
)


@dataclass(frozen=True)
class NudgeConfig:
    lookahead: float = 10.0           # s ahead on the plan
    speed_advise: float = 0.2         # m/s
    speed_warn: float = 1.0
    heading_advise: float = math.radians(3.0)
    heading_warn: float = math.radians(15.0)
    stale_after: float = 60.0         # s without a state update


@dataclass(frozen=True)
class Nudge:
    heading_delta: float
    speed_delta: float
    text: str
    severity: str  # info | advise | warn

    def to_dict(self) -> dict:
        return {
            "heading_delta": self.heading_delta,
            "speed_delta": self.speed_delta,
            "text": self.text,
            "severity": self.severity,
        }


@dataclass
class ParetoResult:
    rows: list[dict] = field(default_factory=list)

    def converged_rows(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "converged"]

    def to_dict(self) -> dict:
        return {"schema_version": 1, "rows": self.rows}

    def to_csv(self) -> str:
        lines = ["duration_s,scaling,total_energy_J,status,iterations"]
        for r in self.rows:
            energy = "" if r["total_energy"] is None else repr(r["total_energy"])
            lines.append(f"{r['duration']!r},{r['scaling']!r},{energy},"
                         f"{r['status']},{r['iterations']}")
        return "\n".join(lines) + "\n"


@dataclass
class LiveSession:
    id: str
    scenario_id: str
    t: float
    x_hat: State
    spec: OcpSpec
    active_plan: TrajectoryPlan | None = None
    history: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    last_update_wall: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock)
    event_cv: threading.Condition = field(default_factory=threading.Condition)

    def push_event(self, kind: str, payload) -> None:
        with self.event_cv:
            self.events.append({"id": len(self.events), "event": kind, "data": payload})
            self.event_cv.notify_all()


class PlannerService:
    """Scenario store plus live shrinking-horizon planning sessions."""

    def __init__(self, data_dir: str | None = None,
                 solver_config: SolverConfig = DEFAULT_SOLVER_CONFIG,
                 nudge_config: NudgeConfig = NudgeConfig(),
                 clock=time.monotonic):
        self.data_dir = data_dir
        self.solver_config = solver_config
        self.nudge_config = nudge_config
        self.clock = clock
        self.scenarios: dict[str, Scenario] = {}
        self.sessions: dict[str, LiveSession] = {}
        self._session_counter = 0
        self._store_lock = threading.Lock()
        if data_dir:
            os.makedirs(os.path.join(data_dir, "scenarios"), exist_ok=True)
            os.makedirs(os.path.join(data_dir, "sessions"), exist_ok=True)
            self._load_persisted()

    # -- scenario management -------------------------------------------------

    def add_scenario(self, scenario: Scenario | dict) -> Scenario:
        if isinstance(scenario, dict):
            scenario = Scenario.from_dict(scenario)
        with self._store_lock:
            self.scenarios[scenario.id] = scenario
        self._persist_scenario(scenario)
        return scenario

    def get_scenario(self, scenario_id: str) -> Scenario:
        try:
            return self.scenarios[scenario_id]
        except KeyError:
            raise KeyError(f"unknown scenario {scenario_id!r}") from None

    def fit_environment(self, scenario_id: str, csv_text: str) -> dict:
        """Re-fit the scenario's wind/current model from CSV samples."""
        scenario = self.get_scenario(scenario_id)
        samples = parse_samples(csv_text.splitlines())
        env = fit_env_model(samples)
        updated = scenario.with_env(env)
        with self._store_lock:
            self.scenarios[scenario_id] = updated
        self._persist_scenario(updated)
        wind_stats = error_stats(env.wind, samples, "wind")
        current_stats = error_stats(env.current, samples, "current")
        return {
            "sample_count": len(samples),
            "wind": wind_stats.to_dict(),
            "current": current_stats.to_dict(),
            "env_model": env.to_dict(),
        }

    # -- sessions -------------------------------------------------------------

    def create_session(self, scenario_id: str, x0: State | None = None,
                       t0: float | None = None) -> LiveSession:
        scenario = self.get_scenario(scenario_id)
        with self._store_lock:
            self._session_counter += 1
            session_id = f"s{self._session_counter}"
        t = scenario.departure if t0 is None else float(t0)
        x_hat = x0 if x0 is not None else scenario.docks[0]
        spec = scenario.to_ocp_spec(t_now=t, x_hat=x_hat)
        session = LiveSession(id=session_id, scenario_id=scenario_id,
                              t=t, x_hat=x_hat, spec=spec,
                              last_update_wall=self.clock())
        self.sessions[session_id] = session
        return session

    def get_session(self, session_id: str) -> LiveSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise KeyError(f"unknown session {session_id!r}") from None

    def _solve_spec(self, spec: OcpSpec, init, session: LiveSession | None):
        nlp = build_nlp(spec)
        callback = None
        if session is not None:
            def callback(entry):
                session.push_event("solver-iteration", {
                    "iteration": entry["iteration"],
                    "objective": entry["objective"],
                    "violation": entry["violation"],
                    "step": entry["step"],
                })
        solution = solve(nlp, init, self.solver_config, iteration_callback=callback)
        if solution.status != "converged":
            raise PlanFailedError(
                f"solver finished with status {solution.status}",
                diagnostics=solution.diagnostics(),
            )
        return extract_plan(spec, solution.z, solution.diagnostics())

    def plan_session(self, session_id: str) -> TrajectoryPlan:
        """Solve the session's current problem and make the plan active."""
        session = self.get_session(session_id)
        with session.lock:
            plan = self._solve_spec(session.spec, initial_guess(session.spec), session)
            self._activate(session, plan)
            return plan

    def update_state(self, session_id: str, t_new: float, x_new: State) -> TrajectoryPlan:
        """Operator update: shrink the horizon, warm start and re-solve."""
        session = self.get_session(session_id)
        with session.lock:
            if t_new >= session.spec.T_end:
                raise SessionComplete(
                    f"session {session_id} reached its arrival time")
            if session.active_plan is None:
                session.spec = OcpSpec(
                    t_now=t_new, T_end=session.spec.T_end, x_hat=x_new,
                    x_dock=session.spec.x_dock, env=session.spec.env,
                    params=session.spec.params, constraints=session.spec.constraints,
                    N_nodes=session.spec.N_nodes, Q=session.spec.Q, R=session.spec.R,
                    power_epsilon=session.spec.power_epsilon)
                warm = initial_guess(session.spec)
            else:
                session.spec, warm = shrink(session.spec, t_new, x_new,
                                            session.active_plan)
            plan = self._solve_spec(session.spec, warm, session)
            session.t = t_new
            session.x_hat = x_new
            self._activate(session, plan)
            return plan

    def _activate(self, session: LiveSession, plan: TrajectoryPlan) -> None:
        session.active_plan = plan
        session.history.append(plan.to_dict())
        session.last_update_wall = self.clock()
        session.push_event("plan-updated", plan.to_dict())
        self._persist_session(session)
        nudge = self._nudge_for(session)
        session.push_event("nudge", nudge.to_dict())

    def get_plan(self, session_id: str) -> TrajectoryPlan:
        session = self.get_session(session_id)
        if session.active_plan is None:
            raise PlanFailedError("no active plan; call plan first")
        return session.active_plan

    def make_nudge(self, session_id: str) -> Nudge:
        session = self.get_session(session_id)
        if session.active_plan is None:
            raise PlanFailedError("no active plan; call plan first")
        return self._nudge_for(session)

    def _nudge_for(self, session: LiveSession) -> Nudge:
        cfg = self.nudge_config
        plan = session.active_plan
        look_t = min(session.t + cfg.lookahead, plan.t_end)
        target = plan.state_at(look_t)
        heading_delta = float(target[2] - session.x_hat.psi)
        speed_delta = float(target[3] - session.x_hat.u_bf)

        parts = []
        if abs(speed_delta) >= cfg.speed_advise:
            verb = "increase speed" if speed_delta > 0 else "reduce speed"
            parts.append(f"{verb} by {abs(speed_delta):.1f} m/s")
        if abs(heading_delta) >= cfg.heading_advise:
            side = "port" if heading_delta > 0 else "starboard"
            parts.append(f"turn {side} {math.degrees(abs(heading_delta)):.0f} deg")
        text = ", ".join(parts) if parts else "hold course and speed"

        stale = (self.clock() - session.last_update_wall) > cfg.stale_after
        if stale:
            severity = "warn"
            text += " (plan stale, request an update)"
        elif (abs(speed_delta) >= cfg.speed_warn
              or abs(heading_delta) >= cfg.heading_warn):
            severity = "warn"
        elif parts:
            severity = "advise"
        else:
            severity = "info"
        return Nudge(heading_delta, speed_delta, text, severity)

    # -- analysis -------------------------------------------------------------

    def pareto_sweep(self, scenario_id: str, durations, scalings) -> ParetoResult:
        """One dock-to-dock solve per (duration, scaling) grid point."""
        scenario = self.get_scenario(scenario_id)
        durations = [float(d) for d in durations]
        scalings = [float(s) for s in scalings]
        if any(d <= 0 for d in durations):
            raise ValueError("durations must be positive")
        if any(s < 0 for s in scalings):
            raise ValueError("scalings must be non-negative")
        result = ParetoResult()
        for scaling in scalings:
            env = scenario.env.scaled(scaling)
            for duration in durations:
                spec = scenario.to_ocp_spec(
                    t_now=0.0, arrival=duration, env=env,
                    x_hat=scenario.docks[0])
                row = {"duration": duration, "scaling": scaling,
                       "total_energy": None, "status": "failed", "iterations": 0}
                try:
                    nlp = build_nlp(spec)
                    solution = solve(nlp, initial_guess(spec), self.solver_config)
                    row["status"] = solution.status
                    row["iterations"] = solution.iterations
                    if solution.status == "converged":
                        plan = extract_plan(spec, solution.z, solution.diagnostics())
                        row["total_energy"] = plan.total_energy
                except FerryPlanError as exc:
                    row["status"] = "failed"
                    row["error"] = str(exc)
                result.rows.append(row)
        return result

    def field_grid(self, scenario_id: str, nx: int = 12, ny: int = 12) -> dict:
        """Sampled wind/current vectors over the corridor for map display."""
        scenario = self.get_scenario(scenario_id)
        nx = max(2, min(int(nx), 200))
        ny = max(2, min(int(ny), 200))
        (xmin, ymin), (xmax, ymax) = scenario.corridor.bounding_box()
        xs = np.linspace(xmin, xmax, nx)
        ys = np.linspace(ymin, ymax, ny)
        X, Y = np.meshgrid(xs, ys)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        wind = scenario.env.wind.value_many(pts).reshape(ny, nx, 2)
        current = scenario.env.current.value_many(pts).reshape(ny, nx, 2)
        return {
            "xs": xs.tolist(),
            "ys": ys.tolist(),
            "wind": wind.tolist(),
            "current": current.tolist(),
        }

    # -- persistence ----------------------------------------------------------

    def _persist_scenario(self, scenario: Scenario) -> None:
        if not self.data_dir:
            return
        path = os.path.join(self.data_dir, "scenarios", f"{scenario.id}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(scenario.to_dict(), fh, indent=1)

    def _persist_session(self, session: LiveSession) -> None:
        if not self.data_dir:
            return
        path = os.path.join(self.data_dir, "sessions", f"{session.id}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({
                "schema_version": 1,
                "id": session.id,
                "scenario_id": session.scenario_id,
                "t": session.t,
                "plans": session.history,
            }, fh, indent=1)

    def _load_persisted(self) -> None:
        directory = os.path.join(self.data_dir, "scenarios")
        for name in sorted(os.listdir(directory)):
            if not name.endswith(".json"):
                continue
            with open(os.path.join(directory, name), encoding="utf-8") as fh:
                data = json.load(fh)
            scenario = Scenario.from_dict(data)
            self.scenarios[scenario.id] = scenario


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------

def create_app(service: PlannerService, api_token: str | None = None):
    from fastapi import Depends, FastAPI, HTTPException, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
    from pydantic import BaseModel

    from . import __version__

    app = FastAPI(title="ferryplan", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    def check_token(request: Request):
        if api_token and request.headers.get("x-api-token") != api_token:
            raise HTTPException(status_code=401, detail="invalid or missing API token")

    guarded = [Depends(check_token)]

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request, exc):
        return JSONResponse(status_code=400, content={
            "error": "validation",
            "detail": [
                {"field": ".".join(str(p) for p in err.get("loc", [])),
                 "message": err.get("msg", "")}
                for err in exc.errors()
            ],
        })

    class SessionCreate(BaseModel):
        scenario_id: str
        x0: list[float] | None = None
        t0: float | None = None

    class StateUpdate(BaseModel):
        t: float
        state: list[float]

    class ParetoRequest(BaseModel):
        durations: list[float]
        scalings: list[float]

    def as_state(values, name="state"):
        if len(values) != 6:
            raise HTTPException(status_code=400,
                                detail=f"{name} must have 6 entries, got {len(values)}")
        try:
            return State(*[float(v) for v in values])
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/scenarios", dependencies=guarded)
    def post_scenario(body: dict):
        try:
            scenario = service.add_scenario(body)
        except (FerryPlanError, ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return {"id": scenario.id}

    @app.get("/scenarios/{scenario_id}", dependencies=guarded)
    def get_scenario(scenario_id: str):
        try:
            return service.get_scenario(scenario_id).to_dict()
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None

    @app.post("/scenarios/{scenario_id}/fit-env", dependencies=guarded)
    async def fit_env(scenario_id: str, request: Request):
        body = (await request.body()).decode("utf-8")
        try:
            return service.fit_environment(scenario_id, body)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except FerryPlanError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.get("/scenarios/{scenario_id}/field-grid", dependencies=guarded)
    def field_grid(scenario_id: str, nx: int = 12, ny: int = 12):
        try:
            return service.field_grid(scenario_id, nx, ny)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None

    @app.post("/scenarios/{scenario_id}/pareto", dependencies=guarded)
    def pareto(scenario_id: str, body: ParetoRequest):
        try:
            result = service.pareto_sweep(scenario_id, body.durations, body.scalings)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return result.to_dict()

    @app.post("/sessions", dependencies=guarded)
    def post_session(body: SessionCreate):
        try:
            x0 = as_state(body.x0) if body.x0 is not None else None
            session = service.create_session(body.scenario_id, x0, body.t0)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except (FerryPlanError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return {"id": session.id, "scenario_id": session.scenario_id,
                "t": session.t, "arrival": session.spec.T_end}

    @app.post("/sessions/{session_id}/plan", dependencies=guarded)
    def post_plan(session_id: str):
        return _plan_call(lambda: service.plan_session(session_id))

    @app.post("/sessions/{session_id}/state", dependencies=guarded)
    def post_state(session_id: str, body: StateUpdate):
        x_new = as_state(body.state)
        return _plan_call(lambda: service.update_state(session_id, body.t, x_new))

    def _plan_call(fn):
        try:
            plan = fn()
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except SessionComplete as exc:
            raise HTTPException(status_code=409, detail={
                "status": "session-complete", "message": str(exc)}) from None
        except PlanFailedError as exc:
            raise HTTPException(status_code=422, detail={
                "status": "plan-failed", "message": str(exc),
                "diagnostics": exc.diagnostics}) from None
        except (BuildError, HorizonExpiredError, ValueError) as exc:
            raise HTTPException(status_code=422, detail={
                "status": "plan-failed", "message": str(exc)}) from None
        return plan.to_dict()

    @app.get("/sessions/{session_id}/plan", dependencies=guarded)
    def get_plan(session_id: str):
        return _plan_call(lambda: service.get_plan(session_id))

    @app.get("/sessions/{session_id}/nudge", dependencies=guarded)
    def get_nudge(session_id: str):
        try:
            return service.make_nudge(session_id).to_dict()
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except PlanFailedError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None

    @app.get("/sessions/{session_id}/events", dependencies=guarded)
    def get_events(session_id: str, after: int = -1, wait: float = 0.0):
        """Server-sent events: replay buffered events, then live-stream.

        `wait` bounds how long the stream stays open once caught up
        (0 = return buffered events and close).
        """
        try:
            session = service.get_session(session_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None

        def stream():
            cursor = after + 1
            deadline = time.monotonic() + max(0.0, float(wait))
            while True:
                with session.event_cv:
                    pending = session.events[cursor:]
                    if not pending:
                        remaining = deadline - time.monotonic()
                        if remaining <= 0:
                            break
                        session.event_cv.wait(timeout=min(remaining, 0.5))
                        pending = session.events[cursor:]
                for ev in pending:
                    cursor = ev["id"] + 1
                    yield (f"id: {ev['id']}\nevent: {ev['event']}\n"
                           f"data: {json.dumps(ev['data'])}\n\n")

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/scenarios/{scenario_id}/pareto.csv", dependencies=guarded)
    def pareto_csv(scenario_id: str, durations: str, scalings: str):
        try:
            result = service.pareto_sweep(
                scenario_id,
                [float(v) for v in durations.split(",") if v],
                [float(v) for v in scalings.split(",") if v])
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return PlainTextResponse(result.to_csv(), media_type="text/csv")

    return app


def api_serve(port: int = 8000, data_dir: str | None = None,
              api_token: str | None = None, host: str = "127.0.0.1"):
    """Run the planning service; blocks until interrupted."""
    import uvicorn

    service = PlannerService(data_dir=data_dir)
    app = create_app(service, api_token=api_token)
    uvicorn.run(app, host=host, port=port, log_level="info")
