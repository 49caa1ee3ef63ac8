"""Scenario assembly: vessel, corridor, environment, docks and schedule.

A scenario file (JSON) carries everything needed to pose planning
problems.  Two equivalent forms are accepted: a dock/schedule form

    {"params": {...}, "corridor": {...}, "env_model": {...},
     "docks": [[x, y, psi], ...], "schedule": {"departure": 0, "arrival": 600},
     "N_nodes": 40, "Q": [...], "R": [...], "power_epsilon": 1.0}

and a direct planning form with "x_hat", "x_dock", "t_now", "T_end"
instead of docks/schedule.  "env_csv" (a path to environment samples)
may replace "env_model".
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .corridor import Corridor, PathConstraintSet, corridor_from_polygon
from .envfield import EnvModel, QuadraticField2D, fit_env_model, parse_samples
from .errors import ParseError
from .model import FerryParams, State
from .transcription import DEFAULT_Q, DEFAULT_R, OcpSpec


def parse_weight(value, default):
    if value is None:
        return default.copy()
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ValueError(f"weight must be a length-3 diagonal or 3x3 matrix, got shape {arr.shape}")


def _pose_state(pose) -> State:
    x, y, psi = float(pose[0]), float(pose[1]), float(pose[2])
    return State(x, y, psi, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Scenario:
    """A route: corridor, environment, dock poses and the timetable."""

    id: str
    params: FerryParams
    corridor: Corridor
    env: EnvModel
    docks: tuple[State, ...]
    departure: float
    arrival: float
    N_nodes: int = 40
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: np.ndarray = field(default_factory=lambda: DEFAULT_R.copy())
    power_epsilon: float = 1.0
    F_limit: float | None = None
    created_at: str | None = None
    modified_at: str | None = None

    def __post_init__(self):
        if len(self.docks) < 2:
            raise ValueError("a scenario needs at least two dock poses")
        if not self.arrival > self.departure:
            raise ValueError("arrival must be after departure")
        for i, dock in enumerate(self.docks):
            if not self.corridor.contains(dock.position):
                raise ValueError(f"dock {i} lies outside the corridor")

    @property
    def duration(self) -> float:
        return self.arrival - self.departure

    def constraint_set(self) -> PathConstraintSet:
        limit = self.F_limit if self.F_limit is not None else 2.0 * self.params.F_AT_max
        return PathConstraintSet(self.corridor, F_limit=limit)

    def to_ocp_spec(self, t_now: float | None = None, x_hat: State | None = None,
                    dock_index: int = 1, env: EnvModel | None = None,
                    arrival: float | None = None) -> OcpSpec:
        """Planning problem from the current time/state to a dock."""
        return OcpSpec(
            t_now=self.departure if t_now is None else t_now,
            T_end=self.arrival if arrival is None else arrival,
            x_hat=self.docks[0] if x_hat is None else x_hat,
            x_dock=self.docks[dock_index],
            env=self.env if env is None else env,
            params=self.params,
            constraints=self.constraint_set(),
            N_nodes=self.N_nodes,
            Q=self.Q,
            R=self.R,
            power_epsilon=self.power_epsilon,
        )

    def with_env(self, env: EnvModel, modified_at: str | None = None) -> "Scenario":
        return replace(self, env=env, modified_at=modified_at)

    def to_dict(self) -> dict:
        d = {
            "schema_version": 1,
            "id": self.id,
            "params": self.params.to_dict(),
            "corridor": self.corridor.to_dict(),
            "env_model": self.env.to_dict(),
            "docks": [[s.x_l, s.y_l, s.psi] for s in self.docks],
            "schedule": {"departure": self.departure, "arrival": self.arrival},
            "N_nodes": self.N_nodes,
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "power_epsilon": self.power_epsilon,
        }
        if self.F_limit is not None:
            d["F_limit"] = self.F_limit
        if self.created_at:
            d["created_at"] = self.created_at
        if self.modified_at:
            d["modified_at"] = self.modified_at
        return d

    @classmethod
    def from_dict(cls, d: dict, scenario_id: str | None = None,
                  base_dir: str | None = None) -> "Scenario":
        params = FerryParams.from_dict(d["params"]) if "params" in d else FerryParams()
        corridor = Corridor.from_dict(d["corridor"])
        env = _load_env(d, base_dir)
        if "docks" in d:
            docks = tuple(_pose_state(p) for p in d["docks"])
        else:
            start = d.get("x_hat", [0.0, 0.0, 0.0])
            docks = (_pose_state(start[0:3]), _pose_state(d["x_dock"][0:3]))
        if "schedule" in d:
            departure = float(d["schedule"]["departure"])
            arrival = float(d["schedule"]["arrival"])
        else:
            departure = float(d.get("t_now", 0.0))
            arrival = float(d["T_end"])
        return cls(
            id=scenario_id or d.get("id", "scenario"),
            params=params,
            corridor=corridor,
            env=env,
            docks=docks,
            departure=departure,
            arrival=arrival,
            N_nodes=int(d.get("N_nodes", 40)),
            Q=parse_weight(d.get("Q"), DEFAULT_Q),
            R=parse_weight(d.get("R"), DEFAULT_R),
            power_epsilon=float(d.get("power_epsilon", 1.0)),
            F_limit=float(d["F_limit"]) if "F_limit" in d else None,
            created_at=d.get("created_at"),
            modified_at=d.get("modified_at"),
        )


def _load_env(d: dict, base_dir: str | None) -> EnvModel:
    if "env_model" in d:
        return EnvModel.from_dict(d["env_model"])
    if "env_csv" in d:
        path = d["env_csv"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        with open(path, encoding="utf-8") as fh:
            return fit_env_model(parse_samples(fh))
    return EnvModel.still()


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid scenario JSON: {exc}") from None
    return Scenario.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def planning_spec_from_file(path) -> OcpSpec:
    """OcpSpec straight from a scenario file (direct planning form)."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    scenario = Scenario.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    t_now = float(data.get("t_now", scenario.departure))
    x_hat = None
    if "x_hat" in data:
        arr = list(map(float, data["x_hat"]))
        if len(arr) == 3:
            arr = arr + [0.0, 0.0, 0.0]
        x_hat = State(*arr)
    return scenario.to_ocp_spec(t_now=t_now, x_hat=x_hat)


# ---------------------------------------------------------------------------
# preset builders: a straight ~2.5 km crossing at the published dock spacing
# ---------------------------------------------------------------------------

DOCK_SEPARATION = 2527.0  # m


def straight_corridor(length: float = DOCK_SEPARATION, width: float = 500.0,
                      margin: float = 150.0) -> Corridor:
    """North-south rectangular corridor with docks on the centerline."""
    half = width / 2.0
    return corridor_from_polygon([
        (-half, -margin), (half, -margin),
        (half, length + margin), (-half, length + margin),
    ])


def crossing_scenario(scenario_id: str = "crossing",
                      duration: float = 600.0,
                      env: EnvModel | None = None,
                      n_nodes: int = 40) -> Scenario:
    """Dock-to-dock transit scenario heading north."""
    return Scenario(
        id=scenario_id,
        params=FerryParams(),
        corridor=straight_corridor(),
        env=env or EnvModel.still(),
        docks=(
            State(0.0, 0.0, math.pi / 2, 0.0, 0.0, 0.0),
            State(0.0, DOCK_SEPARATION, math.pi / 2, 0.0, 0.0, 0.0),
        ),
        departure=0.0,
        arrival=duration,
        N_nodes=n_nodes,
    )


def hover_scenario(scenario_id: str = "hover", duration: float = 240.0) -> Scenario:
    """Station keeping at the first dock; both docks identical."""
    dock = State(0.0, 0.0, math.pi / 2, 0.0, 0.0, 0.0)
    return Scenario(
        id=scenario_id,
        params=FerryParams(),
        corridor=straight_corridor(length=200.0, width=400.0, margin=200.0),
        env=EnvModel.still(),
        docks=(dock, dock),
        departure=0.0,
        arrival=duration,
        N_nodes=20,
    )


def standard_operation_env(wind_speed: float = 11.0,
                           current_amplitude: float = 0.1) -> EnvModel:
    """Uniform wind from the north plus a spatially varying cross-current.

    The current points east with a parabolic profile along the transit,
    zero at the docks and peaking at `current_amplitude` mid-corridor.
    """
    L = DOCK_SEPARATION
    # v_cx(y) = 4 a (y/L)(1 - y/L): quadratic, peak a at y = L/2
    a = current_amplitude
    current = QuadraticField2D(
        Qx=[[0.0, 0.0], [0.0, -8.0 * a / L**2]],
        Qy=[[0.0, 0.0], [0.0, 0.0]],
        Lx=[0.0, 4.0 * a / L],
        Ly=[0.0, 0.0],
        mux=0.0, muy=0.0,
    )
    wind = QuadraticField2D.constant(0.0, -wind_speed)
    return EnvModel(wind, current)


def headon_env(scaling: float = 1.0, wind_speed: float = 13.0,
               current_speed: float = 0.2) -> EnvModel:
    """Uniform wind and current from the north, linearly scalable."""
    return EnvModel.uniform(
        wind_v=(0.0, -wind_speed * scaling),
        current_v=(0.0, -current_speed * scaling),
    )
