"""Simplified 3-DOF ferry dynamics with analytic derivatives.

State x = [x_l, y_l, psi, u_bf, v_bf, r_bf]: ENU position and yaw plus
body-fixed velocities over ground.  Control u = [X_a, Y_a, rdot_bf]:
body-frame actuator forces and a commanded yaw acceleration.  Surge and
sway accelerations balance actuator force, wind drag, a rigid-body
Coriolis coupling and a second-order modulus water damping; yaw rate is
driven directly.

All force helpers return the term as it enters the acceleration
balance; damping and Coriolis are subtracted there.  Everything here is
pure and side-effect free.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .envfield import EnvModel, QuadraticField2D
from .errors import IntegrationError, SaturationError

NX = 6  # state dimension
NU = 3  # control dimension


@dataclass(frozen=True)
class State:
    """Pose (m, m, rad) and body-fixed velocities (m/s, m/s, rad/s).

    Yaw is stored unwrapped; nothing in this package reduces it mod 2*pi.
    """

    x_l: float
    y_l: float
    psi: float
    u_bf: float
    v_bf: float
    r_bf: float

    def __post_init__(self):
        if not all(map(math.isfinite, self.as_array())):
            raise ValueError(f"state has non-finite entries: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_l, self.y_l, self.psi, self.u_bf, self.v_bf, self.r_bf])

    @classmethod
    def from_array(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(*x.tolist())

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x_l, self.y_l])

    @property
    def nu(self) -> np.ndarray:
        return np.array([self.u_bf, self.v_bf, self.r_bf])


@dataclass(frozen=True)
class ControlInput:
    """Actuator forces (N) in the body frame and commanded yaw acceleration (rad/s^2)."""

    X_a: float
    Y_a: float
    rdot_bf: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.X_a, self.Y_a, self.rdot_bf))):
            raise ValueError(f"control input has non-finite entries: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.X_a, self.Y_a, self.rdot_bf])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(*u.tolist())


@dataclass(frozen=True)
class FerryParams:
    """Vessel parameters; defaults are the identified MS Insel Mainau values."""

    m: float = 35000.0          # kg
    X_u: float = 1470.0         # N s/m
    X_uu: float = 753.0         # N s^2/m^2
    Y_v: float = 10290.0        # N s/m
    Y_vv: float = 5272.0        # N s^2/m^2
    A_Fw: float = 59.2          # m^2 frontal projected area
    A_Lw: float = 219.0         # m^2 lateral projected area
    c_x: float = 0.59           # frontal wind drag coefficient
    c_y: float = 0.84           # lateral wind drag coefficient
    rho: float = 1.204          # kg/m^3 air density
    F_AT_max: float = 24000.0   # N per azimuth thruster
    c_p_check: float = 0.0417   # m^1/2 kg^-1/2 power coefficient

    def __post_init__(self):
        for name in ("m", "X_u", "X_uu", "Y_v", "Y_vv", "A_Fw", "A_Lw",
                     "rho", "F_AT_max", "c_p_check"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("c_x", "c_y"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FerryParams":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "FerryParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class ActuatorSetting:
    """Per-thruster force, azimuth angle and (folded-constant) propeller speed."""

    F_AT: float
    alpha: float
    n_AT: float


def rotation_body_to_enu(psi: float) -> np.ndarray:
    """Homogeneous rotation taking body-frame [u, v, r] rates to ENU pose rates."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot2(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s], [s, c]])


def relative_velocity(state: State, field: QuadraticField2D):
    """Body-frame velocity relative to the ambient flow and its angle of attack."""
    x = state.as_array() if isinstance(state, State) else np.asarray(state, dtype=float)
    w = _relative_velocity_array(x, field)
    return float(w[0]), float(w[1]), math.atan2(w[1], w[0])


def _relative_velocity_array(x: np.ndarray, field: QuadraticField2D) -> np.ndarray:
    ambient = field.value(x[0:2])
    return x[3:5] - _rot2(x[2]).T @ ambient


def damping_force(u_r: float, v_r: float, params: FerryParams) -> np.ndarray:
    """Second-order modulus water damping [N]; subtracted in the dynamics."""
    return np.array([
        params.X_u * u_r + params.X_uu * abs(u_r) * u_r,
        params.Y_v * v_r + params.Y_vv * abs(v_r) * v_r,
    ])


def wind_force(state, wind_field: QuadraticField2D, params: FerryParams) -> np.ndarray:
    """Aerodynamic drag [N] on the relative air motion; added in the dynamics.

    Sign convention: relative velocity is vessel minus air, and both
    components oppose it, so the force never feeds energy into the
    relative motion.
    """
    x = state.as_array() if isinstance(state, State) else np.asarray(state, dtype=float)
    w = _relative_velocity_array(x, wind_field)
    return _wind_force_from_relative(w, params)


def _wind_force_from_relative(w: np.ndarray, params: FerryParams) -> np.ndarray:
    speed = math.hypot(w[0], w[1])
    return -0.5 * params.rho * speed * np.array([
        params.c_x * params.A_Fw * w[0],
        params.c_y * params.A_Lw * w[1],
    ])


def coriolis_force(nu, m: float) -> np.ndarray:
    """Rigid-body point-mass coupling C(nu)*nu [N]; subtracted in the dynamics."""
    u, v, r = nu[0], nu[1], nu[2]
    return np.array([-m * v * r, m * u * r])


def dynamics(state, control, env: EnvModel, params: FerryParams) -> np.ndarray:
    """Time derivative of the 6-state under the given control and environment."""
    x = state.as_array() if isinstance(state, State) else np.asarray(state, dtype=float)
    u = control.as_array() if isinstance(control, ControlInput) else np.asarray(control, dtype=float)
    c, s = math.cos(x[2]), math.sin(x[2])
    w_water = _relative_velocity_array(x, env.current)
    w_air = _relative_velocity_array(x, env.wind)
    damping = damping_force(w_water[0], w_water[1], params)
    tau_w = _wind_force_from_relative(w_air, params)
    cor = coriolis_force(x[3:6], params.m)
    acc = (u[0:2] + tau_w - cor - damping) / params.m
    return np.array([
        c * x[3] - s * x[4],
        s * x[3] + c * x[4],
        x[5],
        acc[0],
        acc[1],
        u[2],
    ])


def _relative_velocity_jacobian(x: np.ndarray, field: QuadraticField2D) -> np.ndarray:
    """d w / d x (2x6) for w = nu_12 - R(psi)^T field(p)."""
    c, s = math.cos(x[2]), math.sin(x[2])
    RT = np.array([[c, s], [-s, c]])
    dRT = np.array([[-s, c], [-c, -s]])
    p = x[0:2]
    J = np.zeros((2, 6))
    J[:, 0:2] = -RT @ field.jacobian(p)
    J[:, 2] = -dRT @ field.value(p)
    J[0, 3] = 1.0
    J[1, 4] = 1.0
    return J


def dynamics_jacobians(x, u, env: EnvModel, params: FerryParams):
    """Analytic (d f/d x, d f/d u) of `dynamics` at raw arrays x, u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    c, s = math.cos(x[2]), math.sin(x[2])
    m = params.m

    fx = np.zeros((6, 6))
    fu = np.zeros((6, 3))

    # kinematics rows
    fx[0, 2] = -s * x[3] - c * x[4]
    fx[0, 3] = c
    fx[0, 4] = -s
    fx[1, 2] = c * x[3] - s * x[4]
    fx[1, 3] = s
    fx[1, 4] = c
    fx[2, 5] = 1.0

    # water damping
    Jw = _relative_velocity_jacobian(x, env.current)
    w = _relative_velocity_array(x, env.current)
    dD = np.diag([
        params.X_u + 2.0 * params.X_uu * abs(w[0]),
        params.Y_v + 2.0 * params.Y_vv * abs(w[1]),
    ])
    JD = dD @ Jw

    # wind drag
    Ja = _relative_velocity_jacobian(x, env.wind)
    a = _relative_velocity_array(x, env.wind)
    n = math.hypot(a[0], a[1])
    if n > 0.0:
        ax = params.c_x * params.A_Fw
        ay = params.c_y * params.A_Lw
        dt_dw = -0.5 * params.rho * np.array([
            [ax * (n + a[0] ** 2 / n), ax * a[0] * a[1] / n],
            [ay * a[0] * a[1] / n, ay * (n + a[1] ** 2 / n)],
        ])
    else:
        dt_dw = np.zeros((2, 2))
    JT = dt_dw @ Ja

    # Coriolis coupling, nu columns only
    JC = np.zeros((2, 6))
    JC[:, 3:6] = np.array([[0.0, -m * x[5], -m * x[4]],
                           [m * x[5], 0.0, m * x[3]]])

    fx[3:5, :] = (JT - JC - JD) / m

    fu[3, 0] = 1.0 / m
    fu[4, 1] = 1.0 / m
    fu[5, 2] = 1.0
    return fx, fu


def rk4(f, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of dy/dt = f(y)."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(state, control, env: EnvModel, params: FerryParams,
             dt: float, substeps: int = 1, check: bool = True):
    """Integrate the ferry dynamics over dt with the control held constant.

    With check=False a diverging trajectory yields non-finite entries
    instead of raising, which optimization line searches rely on to
    reject a trial point.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    typed = isinstance(state, State)
    x = state.as_array() if typed else np.asarray(state, dtype=float)
    u = control.as_array() if isinstance(control, ControlInput) else np.asarray(control, dtype=float)
    h = dt / substeps
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(substeps):
            x = rk4(lambda y: dynamics(y, u, env, params), x, h)
            if not np.all(np.isfinite(x)):
                break
    if not np.all(np.isfinite(x)):
        if check:
            raise IntegrationError(f"non-finite state after step of dt={dt}")
        return np.full(6, np.nan)
    return State.from_array(x) if typed else x


def rk4_step_with_jacobians(x, u, env: EnvModel, params: FerryParams,
                            dt: float, substeps: int = 1):
    """RK4 step plus analytic sensitivities (d x+/d x, d x+/d u)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / substeps
    Phi_x = np.eye(6)
    Phi_u = np.zeros((6, 3))
    for _ in range(substeps):
        k1 = dynamics(x, u, env, params)
        A1, B1 = dynamics_jacobians(x, u, env, params)

        x2 = x + 0.5 * h * k1
        k2 = dynamics(x2, u, env, params)
        A2s, B2s = dynamics_jacobians(x2, u, env, params)
        A2 = A2s @ (np.eye(6) + 0.5 * h * A1)
        B2 = A2s @ (0.5 * h * B1) + B2s

        x3 = x + 0.5 * h * k2
        k3 = dynamics(x3, u, env, params)
        A3s, B3s = dynamics_jacobians(x3, u, env, params)
        A3 = A3s @ (np.eye(6) + 0.5 * h * A2)
        B3 = A3s @ (0.5 * h * B2) + B3s

        x4 = x + h * k3
        k4 = dynamics(x4, u, env, params)
        A4s, B4s = dynamics_jacobians(x4, u, env, params)
        A4 = A4s @ (np.eye(6) + h * A3)
        B4 = A4s @ (h * B3) + B4s

        step_x = np.eye(6) + (h / 6.0) * (A1 + 2.0 * A2 + 2.0 * A3 + A4)
        step_u = (h / 6.0) * (B1 + 2.0 * B2 + 2.0 * B3 + B4)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        Phi_x = step_x @ Phi_x
        Phi_u = step_x @ Phi_u + step_u
    return x, Phi_x, Phi_u


def power(control, params: FerryParams) -> float:
    """Exact actuator power demand [W]: 2 c_p ((X_a^2 + Y_a^2)/4)^(3/4)."""
    if isinstance(control, ControlInput):
        xa, ya = control.X_a, control.Y_a
    else:
        xa, ya = float(control[0]), float(control[1])
    return 2.0 * params.c_p_check * ((xa * xa + ya * ya) / 4.0) ** 0.75


def smoothed_power(xa: float, ya: float, params: FerryParams, epsilon: float) -> float:
    """Power with the curvature-bounded smoothing used inside the optimizer."""
    s = (xa * xa + ya * ya + epsilon * epsilon) / 4.0
    return 2.0 * params.c_p_check * s**0.75


def smoothed_power_gradient(xa: float, ya: float, params: FerryParams,
                            epsilon: float) -> np.ndarray:
    """d P_eps / d (X_a, Y_a)."""
    s = (xa * xa + ya * ya + epsilon * epsilon) / 4.0
    if s == 0.0:
        return np.zeros(2)
    k = 0.75 * params.c_p_check * s**-0.25
    return k * np.array([xa, ya])


def smoothed_power_hessian(xa: float, ya: float, params: FerryParams,
                           epsilon: float) -> np.ndarray:
    """d^2 P_eps / d (X_a, Y_a)^2; positive semi-definite for any epsilon."""
    s = (xa * xa + ya * ya + epsilon * epsilon) / 4.0
    if s == 0.0:
        return np.zeros((2, 2))
    cp = params.c_p_check
    k1 = 0.75 * cp * s**-0.25
    k2 = -0.75 * cp / 8.0 * s**-1.25
    return np.array([
        [k1 + k2 * xa * xa, k2 * xa * ya],
        [k2 * xa * ya, k1 + k2 * ya * ya],
    ])


def allocate_actuators(X_a: float, Y_a: float, params: FerryParams) -> ActuatorSetting:
    """Map a body-frame force demand to the common thruster force and angle."""
    demand = math.hypot(X_a, Y_a)
    limit = 2.0 * params.F_AT_max
    if demand > limit:
        raise SaturationError(
            f"force demand {demand:.1f} N exceeds the {limit:.0f} N envelope",
            scale=limit / demand,
        )
    f_at = 0.5 * demand
    alpha = math.atan2(Y_a, X_a)
    return ActuatorSetting(F_AT=f_at, alpha=alpha, n_AT=math.sqrt(f_at))
