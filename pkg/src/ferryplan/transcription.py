"""Direct multiple-shooting transcription of the docking problem.

The continuous problem: steer the ferry from the current state estimate
to the dock pose at the fixed arrival time, minimizing propulsion
energy plus small quadratic regularization, subject to the corridor and
actuator-force path constraints.

Discretization: N shooting intervals of uniform dt with piecewise
constant inputs.  Decision vector layout:

    z = [x_0, ..., x_N, u_0, ..., u_{N-1}]       (6(N+1) + 3N entries)

Objective (rectangle rule; exact for the piecewise-constant inputs):

    sum_k dt * [ P_eps(u_k) + nu_k' Q nu_k + u_k' R u_k ],   k = 0..N-1

with state regularization sampled at left nodes.  Equalities: initial
pin, one RK4 continuity residual per interval, terminal pin.
Inequalities: corridor half-planes at every node, then one force-norm
row per interval, scaled by 1/(2 F_limit) so a unit violation means
roughly one newton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .corridor import PathConstraintSet
from .envfield import EnvModel
from .errors import BuildError, ExtractionError, HorizonExpiredError
from .model import (
    NU,
    NX,
    FerryParams,
    State,
    dynamics,
    power,
    rk4_step,
    rk4_step_with_jacobians,
    smoothed_power,
    smoothed_power_gradient,
    smoothed_power_hessian,
)

DEFAULT_Q = np.diag([0.0, 0.0, 10.0])
DEFAULT_R = np.diag([1e-6, 1e-6, 10.0])


def _check_psd(M, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M).min() < -1e-12:
        raise ValueError(f"{name} must be positive semi-definite")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class OcpSpec:
    """Everything needed to pose one shrinking-horizon planning problem."""

    t_now: float
    T_end: float
    x_hat: State
    x_dock: State
    env: EnvModel
    params: FerryParams
    constraints: PathConstraintSet
    N_nodes: int = 40
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())
    R: np.ndarray = field(default_factory=lambda: DEFAULT_R.copy())
    power_epsilon: float = 1.0
    rk_substeps: int | None = None

    def __post_init__(self):
        if not self.t_now < self.T_end:
            raise ValueError(f"t_now ({self.t_now}) must precede T_end ({self.T_end})")
        if self.N_nodes < 1:
            raise ValueError("N_nodes must be at least 1")
        if self.rk_substeps is not None and self.rk_substeps < 1:
            raise ValueError("rk_substeps must be at least 1")
        object.__setattr__(self, "Q", _check_psd(self.Q, "Q"))
        object.__setattr__(self, "R", _check_psd(self.R, "R"))
        corridor = self.constraints.corridor
        if not corridor.contains(self.x_hat.position):
            raise BuildError("current state estimate lies outside the corridor")
        if not corridor.contains(self.x_dock.position):
            raise BuildError("dock pose lies outside the corridor")

    @property
    def horizon(self) -> float:
        return self.T_end - self.t_now

    @property
    def dt(self) -> float:
        return self.horizon / self.N_nodes

    @property
    def substeps(self) -> int:
        """Integrator substeps per shooting interval.

        Unless overridden, chosen so each substep stays below ~4 s: the
        sway damping time constant is a few seconds and a single RK4
        step across a long interval would sit outside the stability
        region near operating speeds.
        """
        if self.rk_substeps is not None:
            return self.rk_substeps
        return max(1, math.ceil(self.dt / 4.0))

    def dock_unwrapped(self) -> State:
        """Dock state with yaw shifted to the 2*pi-branch nearest x_hat."""
        shift = 2.0 * math.pi * round((self.x_hat.psi - self.x_dock.psi) / (2.0 * math.pi))
        return State(self.x_dock.x_l, self.x_dock.y_l, self.x_dock.psi + shift,
                     self.x_dock.u_bf, self.x_dock.v_bf, self.x_dock.r_bf)


def pack_decision(states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    return np.concatenate([states.ravel(), inputs.ravel()])


def unpack_decision(z: np.ndarray, n_nodes: int):
    z = np.asarray(z, dtype=float)
    n_states = NX * (n_nodes + 1)
    states = z[:n_states].reshape(n_nodes + 1, NX)
    inputs = z[n_states:].reshape(n_nodes, NU)
    return states, inputs


class FerryNlp:
    """The transcribed NLP: callbacks plus layout metadata for the solver."""

    def __init__(self, spec: OcpSpec):
        self.spec = spec
        self.N = spec.N_nodes
        self.n = NX * (self.N + 1) + NU * self.N
        corridor = spec.constraints.corridor
        self._cor_A = corridor.halfplanes[:, 0:2]
        self._cor_c = corridor.halfplanes[:, 2]
        self._n_hp = len(self._cor_c)
        self.n_eq = NX * (self.N + 2)
        self.n_ineq = self._n_hp * (self.N + 1) + self.N
        self._dock = spec.dock_unwrapped().as_array()
        self._x_hat = spec.x_hat.as_array()
        self._step_cache = (None, None)
        self._jac_cache = (None, None)
        self.layout = {
            "n_nodes": self.N,
            "dt": spec.dt,
            "states": [0, NX * (self.N + 1)],
            "inputs": [NX * (self.N + 1), self.n],
            "equalities": "initial, continuity per interval, terminal",
            "inequalities": f"{self._n_hp} corridor rows per node, then "
                            f"force-norm rows scaled by 1/(2*F_limit)",
        }
        # physical step quanta for the solver's restricted-step globalization
        self.step_scale = pack_decision(
            np.tile([10.0, 10.0, 0.05, 0.5, 0.5, 0.01], (self.N + 1, 1)),
            np.tile([2000.0, 2000.0, 0.005], (self.N, 1)),
        )

    # -- shooting ----------------------------------------------------------

    def _steps(self, z: np.ndarray) -> np.ndarray:
        key = z.tobytes()
        if self._step_cache[0] == key:
            return self._step_cache[1]
        spec = self.spec
        states, inputs = unpack_decision(z, self.N)
        nxt = np.empty((self.N, NX))
        for k in range(self.N):
            nxt[k] = rk4_step(states[k], inputs[k], spec.env, spec.params,
                              spec.dt, substeps=spec.substeps, check=False)
        self._step_cache = (key, nxt)
        return nxt

    def _step_jacobians(self, z: np.ndarray):
        key = z.tobytes()
        if self._jac_cache[0] == key:
            return self._jac_cache[1]
        spec = self.spec
        states, inputs = unpack_decision(z, self.N)
        out = []
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(self.N):
                out.append(rk4_step_with_jacobians(
                    states[k], inputs[k], spec.env, spec.params,
                    spec.dt, substeps=spec.substeps))
        self._jac_cache = (key, out)
        return out

    # -- objective ---------------------------------------------------------

    def objective(self, z: np.ndarray) -> float:
        spec = self.spec
        states, inputs = unpack_decision(z, self.N)
        dt = spec.dt
        total = 0.0
        for k in range(self.N):
            nu = states[k, 3:6]
            u = inputs[k]
            total += dt * (
                smoothed_power(u[0], u[1], spec.params, spec.power_epsilon)
                + nu @ spec.Q @ nu
                + u @ spec.R @ u
            )
        return float(total)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        spec = self.spec
        states, inputs = unpack_decision(z, self.N)
        dt = spec.dt
        g_states = np.zeros((self.N + 1, NX))
        g_inputs = np.zeros((self.N, NU))
        for k in range(self.N):
            g_states[k, 3:6] = 2.0 * dt * (spec.Q @ states[k, 3:6])
            u = inputs[k]
            g_inputs[k, 0:2] = dt * smoothed_power_gradient(
                u[0], u[1], spec.params, spec.power_epsilon)
            g_inputs[k] += 2.0 * dt * (spec.R @ u)
        return pack_decision(g_states, g_inputs)

    def hessian(self, z: np.ndarray) -> np.ndarray:
        spec = self.spec
        _, inputs = unpack_decision(z, self.N)
        dt = spec.dt
        H = np.zeros((self.n, self.n))
        for k in range(self.N):
            i = NX * k + 3
            H[i:i + 3, i:i + 3] = 2.0 * dt * spec.Q
            j = NX * (self.N + 1) + NU * k
            blk = 2.0 * dt * spec.R.copy()
            blk[0:2, 0:2] += dt * smoothed_power_hessian(
                inputs[k][0], inputs[k][1], spec.params, spec.power_epsilon)
            H[j:j + 3, j:j + 3] = blk
        return H

    # -- equality constraints ----------------------------------------------

    def eq_constraints(self, z: np.ndarray) -> np.ndarray:
        states, _ = unpack_decision(z, self.N)
        nxt = self._steps(z)
        out = np.empty(self.n_eq)
        out[0:NX] = states[0] - self._x_hat
        for k in range(self.N):
            out[NX * (k + 1):NX * (k + 2)] = states[k + 1] - nxt[k]
        out[NX * (self.N + 1):] = states[self.N] - self._dock
        return out

    def eq_jacobian(self, z: np.ndarray) -> np.ndarray:
        J = np.zeros((self.n_eq, self.n))
        jacs = self._step_jacobians(z)
        u_off = NX * (self.N + 1)
        J[0:NX, 0:NX] = np.eye(NX)
        for k in range(self.N):
            r = NX * (k + 1)
            _, phi_x, phi_u = jacs[k]
            J[r:r + NX, NX * k:NX * (k + 1)] = -phi_x
            J[r:r + NX, NX * (k + 1):NX * (k + 2)] = np.eye(NX)
            J[r:r + NX, u_off + NU * k:u_off + NU * (k + 1)] = -phi_u
        r = NX * (self.N + 1)
        J[r:r + NX, NX * self.N:NX * (self.N + 1)] = np.eye(NX)
        return J

    # -- inequality constraints ----------------------------------------------

    def ineq_constraints(self, z: np.ndarray) -> np.ndarray:
        states, inputs = unpack_decision(z, self.N)
        F_limit = self.spec.constraints.F_limit
        cor = (states[:, 0:2] @ self._cor_A.T + self._cor_c).ravel()
        force = (inputs[:, 0] ** 2 + inputs[:, 1] ** 2 - F_limit**2) / (2.0 * F_limit)
        return np.concatenate([cor, force])

    def ineq_jacobian(self, z: np.ndarray) -> np.ndarray:
        _, inputs = unpack_decision(z, self.N)
        F_limit = self.spec.constraints.F_limit
        J = np.zeros((self.n_ineq, self.n))
        for k in range(self.N + 1):
            r = self._n_hp * k
            J[r:r + self._n_hp, NX * k:NX * k + 2] = self._cor_A
        u_off = NX * (self.N + 1)
        r0 = self._n_hp * (self.N + 1)
        for k in range(self.N):
            J[r0 + k, u_off + NU * k] = inputs[k, 0] / F_limit
            J[r0 + k, u_off + NU * k + 1] = inputs[k, 1] / F_limit
        return J


def build_nlp(spec: OcpSpec) -> FerryNlp:
    """Transcribe the planning problem; raises BuildError on infeasible data."""
    return FerryNlp(spec)


def initial_guess(spec: OcpSpec) -> np.ndarray:
    """Straight-line interpolation guess with inverse-dynamics inputs.

    Node states interpolate pose from the estimate to the dock (yaw
    along the nearest branch) with body velocities consistent with the
    straight transit; endpoint states are pinned exactly so the initial
    and terminal equalities hold by construction.
    """
    N = spec.N_nodes
    dock = spec.dock_unwrapped().as_array()
    x_hat = spec.x_hat.as_array()
    T = spec.horizon
    states = np.zeros((N + 1, NX))
    vel_enu = (dock[0:2] - x_hat[0:2]) / T
    yaw_rate = (dock[2] - x_hat[2]) / T
    for k in range(N + 1):
        tau = k / N
        pose = (1.0 - tau) * x_hat[0:3] + tau * dock[0:3]
        psi = pose[2]
        c, s = math.cos(psi), math.sin(psi)
        body_vel = np.array([c * vel_enu[0] + s * vel_enu[1],
                             -s * vel_enu[0] + c * vel_enu[1]])
        states[k] = np.concatenate([pose, body_vel, [yaw_rate]])
    states[0] = x_hat
    states[N] = dock

    inputs = np.zeros((N, NU))
    F_limit = spec.constraints.F_limit
    for k in range(N):
        nu_dot = (states[k + 1, 3:6] - states[k, 3:6]) / spec.dt
        # force balancing the modelled resistance along the guess
        accel_free = dynamics(states[k], np.zeros(NU), spec.env, spec.params)[3:5]
        force = spec.params.m * (nu_dot[0:2] - accel_free)
        norm = math.hypot(force[0], force[1])
        if norm > F_limit:
            force *= F_limit / norm
        inputs[k] = [force[0], force[1], nu_dot[2]]
    return pack_decision(states, inputs)


@dataclass(frozen=True)
class TrajectoryPlan:
    """Solved trajectory with per-interval energy and solver diagnostics."""

    times: np.ndarray
    states: np.ndarray          # (N+1, 6)
    inputs: np.ndarray          # (N, 3)
    step_energy: np.ndarray     # (N,), joules, exact power model
    total_energy: float
    objective_value: float
    diagnostics: dict

    def __post_init__(self):
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("plan times must be strictly increasing")

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the node states (yaw is unwrapped)."""
        t = min(max(t, self.t_start), self.t_end)
        return np.array([np.interp(t, self.times, self.states[:, j]) for j in range(NX)])

    def input_at(self, t: float) -> np.ndarray:
        """Zero-order-hold lookup of the piecewise-constant input."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.inputs) - 1)
        return self.inputs[k].copy()

    def energy_from(self, t: float) -> float:
        """Energy of the plan tail from time t (whole intervals after t)."""
        mask = self.times[:-1] >= t - 1e-9
        return float(self.step_energy[mask].sum())

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "step_energy": self.step_energy.tolist(),
            "total_energy": self.total_energy,
            "objective_value": self.objective_value,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryPlan":
        return cls(
            times=np.asarray(d["times"], dtype=float),
            states=np.asarray(d["states"], dtype=float),
            inputs=np.asarray(d["inputs"], dtype=float),
            step_energy=np.asarray(d["step_energy"], dtype=float),
            total_energy=float(d["total_energy"]),
            objective_value=float(d.get("objective_value", 0.0)),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def extract_plan(spec: OcpSpec, z: np.ndarray, diagnostics: dict | None = None) -> TrajectoryPlan:
    """Unpack a solution vector into a time-stamped plan.

    Per-interval energy uses the exact power model (epsilon = 0); the
    smoothed power only shapes the optimization objective.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ExtractionError("solution vector contains non-finite entries")
    states, inputs = unpack_decision(z, spec.N_nodes)
    dt = spec.dt
    times = spec.t_now + dt * np.arange(spec.N_nodes + 1)
    step_energy = np.array([dt * power(u, spec.params) for u in inputs])
    nlp = FerryNlp(spec)
    return TrajectoryPlan(
        times=times,
        states=states.copy(),
        inputs=inputs.copy(),
        step_energy=step_energy,
        total_energy=float(step_energy.sum()),
        objective_value=nlp.objective(z),
        diagnostics=dict(diagnostics or {}),
    )


def shrink(spec: OcpSpec, t_new: float, x_hat_new: State,
           previous: TrajectoryPlan):
    """Advance the horizon: same arrival time, same node count, shorter dt.

    Returns the new spec plus a warm-start vector sampled from the
    previous plan at the new node times (states and inputs linearly
    interpolated; the first state is overwritten with the new estimate).
    """
    if t_new >= spec.T_end:
        raise HorizonExpiredError(
            f"replan time {t_new} is at or beyond the arrival time {spec.T_end}")
    if t_new < spec.t_now:
        raise ValueError("replan time cannot move backwards")
    new_spec = replace(spec, t_now=t_new, x_hat=x_hat_new)
    N = spec.N_nodes
    node_times = t_new + new_spec.dt * np.arange(N + 1)
    states = np.column_stack([
        np.interp(node_times, previous.times, previous.states[:, j])
        for j in range(NX)
    ])
    input_times = previous.times[:-1]
    new_input_times = node_times[:-1]
    inputs = np.column_stack([
        np.interp(new_input_times, input_times, previous.inputs[:, j])
        for j in range(NU)
    ])
    states[0] = x_hat_new.as_array()
    return new_spec, pack_decision(states, inputs)
