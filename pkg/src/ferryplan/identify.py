"""Parameter identification from steady-state telemetry.

Two-stage least squares: surge damping coefficients from
(speed, thrust) pairs, then the power coefficient from
(thrust, power) pairs.  A joint fit of power over speed alone cannot
separate the power coefficient from the damping scale, hence the
factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InsufficientDataError, ParseError, RankDeficientError
from .model import FerryParams

TELEMETRY_HEADER = ("surge_speed", "thrust_total", "power_total")


@dataclass(frozen=True)
class SteadyStateSample:
    """One steady operating point; missing channels are None."""

    surge_speed: float | None = None
    thrust_total: float | None = None
    power_total: float | None = None

    def __post_init__(self):
        if self.surge_speed is not None and self.surge_speed < 0:
            raise ValueError("surge_speed must be non-negative")
        if self.thrust_total is not None and self.thrust_total < 0:
            raise ValueError("thrust_total must be non-negative")
        if self.power_total is not None and self.power_total < 0:
            raise ValueError("power_total must be non-negative")


class DampingFit(NamedTuple):
    X_u: float
    X_uu: float
    residual_rms: float


class PowerCoeffFit(NamedTuple):
    c_p_check: float
    residual_rms: float
    max_abs_residual: float


def parse_telemetry(stream) -> list[SteadyStateSample]:
    """Parse steady-state telemetry CSV; empty cells mark absent channels."""
    samples = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        if line_no == 1 and tokens[0].lower() == TELEMETRY_HEADER[0]:
            if [t.lower() for t in tokens] != list(TELEMETRY_HEADER):
                raise ParseError(
                    f"unexpected header {tokens!r}; expected {','.join(TELEMETRY_HEADER)}",
                    line=line_no,
                )
            continue
        if len(tokens) != 3:
            raise ParseError(f"expected 3 comma-separated values, got {len(tokens)}",
                             line=line_no)
        values = []
        for tok, name in zip(tokens, TELEMETRY_HEADER):
            if tok == "":
                values.append(None)
                continue
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"cannot parse {name} from {tok!r}", line=line_no) from None
            if not math.isfinite(v):
                raise ParseError(f"{name} is not finite", line=line_no)
            values.append(v)
        try:
            samples.append(SteadyStateSample(*values))
        except ValueError as exc:
            raise ParseError(str(exc), line=line_no) from None
    return samples


def fit_damping(pairs: Sequence[tuple[float, float]]) -> DampingFit:
    """Least-squares thrust = X_u*v + X_uu*v^2 with non-negative coefficients.

    Negative drag is unphysical; a negative unconstrained solution is
    clamped to the boundary and the remaining coefficient re-solved
    (exact two-variable active-set enumeration).
    """
    v = np.array([p[0] for p in pairs], dtype=float)
    F = np.array([p[1] for p in pairs], dtype=float)
    if len(set(v[v > 0].tolist())) < 2:
        raise RankDeficientError(
            "damping fit needs at least two distinct nonzero speeds",
            rank=int(len(set(v[v > 0].tolist()))),
        )
    A = np.column_stack([v, v * v])

    def solve(active_mask):
        cols = [i for i in range(2) if not active_mask[i]]
        coef = np.zeros(2)
        if cols:
            sub = A[:, cols]
            sol, *_ = np.linalg.lstsq(sub, F, rcond=None)
            for i, c in zip(cols, sol):
                coef[i] = c
        return coef

    best = None
    for mask in ((False, False), (True, False), (False, True), (True, True)):
        coef = solve(mask)
        if coef[0] < 0 or coef[1] < 0:
            continue
        ssr = float(np.sum((A @ coef - F) ** 2))
        if best is None or ssr < best[0] - 1e-12 * max(1.0, best[0]):
            best = (ssr, coef)
    ssr, coef = best
    return DampingFit(float(coef[0]), float(coef[1]), math.sqrt(ssr / len(v)))


def fit_power_coeff(pairs: Sequence[tuple[float, float]]) -> PowerCoeffFit:
    """Closed-form least squares of P = 2*c_p*(F^2/4)^(3/4), linear in c_p."""
    F = np.array([p[0] for p in pairs], dtype=float)
    P = np.array([p[1] for p in pairs], dtype=float)
    g = (F * F / 4.0) ** 0.75
    denom = 2.0 * float(g @ g)
    if denom == 0.0:
        raise InsufficientDataError("power fit needs at least one sample with nonzero thrust")
    c_p = float(P @ g) / denom
    residuals = 2.0 * c_p * g - P
    return PowerCoeffFit(
        c_p,
        float(np.sqrt(np.mean(residuals**2))),
        float(np.max(np.abs(residuals))),
    )


def damping_pairs(samples: Sequence[SteadyStateSample]) -> list[tuple[float, float]]:
    return [(s.surge_speed, s.thrust_total) for s in samples
            if s.surge_speed is not None and s.thrust_total is not None]


def power_pairs(samples: Sequence[SteadyStateSample]) -> list[tuple[float, float]]:
    return [(s.thrust_total, s.power_total) for s in samples
            if s.thrust_total is not None and s.power_total is not None]


def steady_thrust(params: FerryParams, speed: float) -> float:
    """Thrust balancing surge damping at constant speed in still conditions."""
    return params.X_u * speed + params.X_uu * speed * speed


def predicted_power_curve(params: FerryParams, speeds: Sequence[float]) -> list[tuple[float, float]]:
    """Steady-state (speed, power) points for the given surge speeds."""
    out = []
    for v in speeds:
        if v < 0:
            raise ValueError("speeds must be non-negative")
        thrust = steady_thrust(params, v)
        p = 2.0 * params.c_p_check * (thrust * thrust / 4.0) ** 0.75
        out.append((float(v), float(p)))
    return out


def identify_from_telemetry(samples: Sequence[SteadyStateSample],
                            base: FerryParams | None = None) -> FerryParams:
    """Build a parameter set with damping and power coefficients re-identified."""
    base = base or FerryParams()
    damping = fit_damping(damping_pairs(samples))
    power = fit_power_coeff(power_pairs(samples))
    return FerryParams(
        m=base.m, X_u=damping.X_u, X_uu=damping.X_uu,
        Y_v=base.Y_v, Y_vv=base.Y_vv,
        A_Fw=base.A_Fw, A_Lw=base.A_Lw, c_x=base.c_x, c_y=base.c_y,
        rho=base.rho, F_AT_max=base.F_AT_max, c_p_check=power.c_p_check,
    )
