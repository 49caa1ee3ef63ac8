"""Energy-optimal trajectory planning and decision support for an electric inland ferry."""

__version__ = "0.1.0"

from .envfield import (
    EnvModel,
    EnvSample,
    FieldErrorStats,
    QuadraticField2D,
    error_stats,
    eval_field,
    fit_env_model,
    fit_field,
    parse_samples,
)
from .model import (
    ActuatorSetting,
    ControlInput,
    FerryParams,
    State,
    allocate_actuators,
    coriolis_force,
    damping_force,
    dynamics,
    power,
    relative_velocity,
    rk4_step,
    rotation_body_to_enu,
    wind_force,
)

__all__ = [
    "EnvModel",
    "EnvSample",
    "FieldErrorStats",
    "QuadraticField2D",
    "error_stats",
    "eval_field",
    "fit_env_model",
    "fit_field",
    "parse_samples",
    "ActuatorSetting",
    "ControlInput",
    "FerryParams",
    "State",
    "allocate_actuators",
    "coriolis_force",
    "damping_force",
    "dynamics",
    "power",
    "relative_velocity",
    "rk4_step",
    "rotation_body_to_enu",
    "wind_force",
]
