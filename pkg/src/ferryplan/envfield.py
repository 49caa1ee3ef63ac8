"""Spatial wind/current models fitted from tabular samples.

Each field maps a 2D position p (meters, local ENU) to a 2D velocity
(m/s) through a quadratic-in-position model per output component:

    v_c(p) = 1/2 p^T Q_c p + L_c p + mu_c,      c in {x, y}

with Q_c symmetric, so one field carries 12 independent parameters and
a wind+current model carries 24.  The model is cheap to evaluate and
provides exact first and second derivatives, which is what the
trajectory optimizer needs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, InsufficientDataError, ParseError, RankDeficientError

MAX_WIND_SPEED = 60.0  # m/s, ingest sanity bound
MAX_CURRENT_SPEED = 5.0  # m/s, ingest sanity bound

CSV_HEADER = ("x_l", "y_l", "vx_wind", "vy_wind", "vx_current", "vy_current")

CONDITION_WARN_THRESHOLD = 1e10


@dataclass(frozen=True)
class EnvSample:
    """One tabular environment sample: position plus wind and current velocity."""

    x_l: float
    y_l: float
    v_x_wind: float
    v_y_wind: float
    v_x_current: float
    v_y_current: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x_l, self.y_l])

    @property
    def wind(self) -> np.ndarray:
        return np.array([self.v_x_wind, self.v_y_wind])

    @property
    def current(self) -> np.ndarray:
        return np.array([self.v_x_current, self.v_y_current])


class QuadraticField2D:
    """Quadratic 2D -> 2D velocity field with analytic derivatives."""

    def __init__(self, Qx, Qy, Lx, Ly, mux, muy):
        Qx = np.asarray(Qx, dtype=float)
        Qy = np.asarray(Qy, dtype=float)
        if Qx.shape != (2, 2) or Qy.shape != (2, 2):
            raise ValueError("Qx and Qy must be 2x2")
        # symmetry is enforced, not trusted
        self.Qx = 0.5 * (Qx + Qx.T)
        self.Qy = 0.5 * (Qy + Qy.T)
        self.Lx = np.asarray(Lx, dtype=float).reshape(2)
        self.Ly = np.asarray(Ly, dtype=float).reshape(2)
        self.mux = float(mux)
        self.muy = float(muy)
        for arr in (self.Qx, self.Qy, self.Lx, self.Ly):
            arr.setflags(write=False)

    @classmethod
    def zero(cls) -> "QuadraticField2D":
        return cls(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.zeros(2), 0.0, 0.0)

    @classmethod
    def constant(cls, vx: float, vy: float) -> "QuadraticField2D":
        return cls(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2), np.zeros(2), vx, vy)

    def params(self) -> np.ndarray:
        """The 12 independent parameters as a flat vector.

        Order: [Qxx_11, Qxx_12, Qxx_22, Lx_1, Lx_2, mux] then the same
        for the y component.
        """
        out = []
        for Q, L, mu in ((self.Qx, self.Lx, self.mux), (self.Qy, self.Ly, self.muy)):
            out.extend([Q[0, 0], Q[0, 1], Q[1, 1], L[0], L[1], mu])
        return np.array(out)

    def value(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        vx = 0.5 * p @ self.Qx @ p + self.Lx @ p + self.mux
        vy = 0.5 * p @ self.Qy @ p + self.Ly @ p + self.muy
        return np.array([vx, vy])

    def jacobian(self, p) -> np.ndarray:
        """2x2 matrix d v / d p; row c is p^T Q_c + L_c."""
        p = np.asarray(p, dtype=float)
        return np.vstack([p @ self.Qx + self.Lx, p @ self.Qy + self.Ly])

    def hessians(self) -> tuple[np.ndarray, np.ndarray]:
        """Position-independent Hessians (Q_x, Q_y) of the two components."""
        return self.Qx, self.Qy

    def value_many(self, pts: np.ndarray) -> np.ndarray:
        """Evaluate at an (n, 2) array of positions; returns (n, 2) velocities."""
        pts = np.asarray(pts, dtype=float)
        vx = 0.5 * np.einsum("ni,ij,nj->n", pts, self.Qx, pts) + pts @ self.Lx + self.mux
        vy = 0.5 * np.einsum("ni,ij,nj->n", pts, self.Qy, pts) + pts @ self.Ly + self.muy
        return np.column_stack([vx, vy])

    def scaled(self, factor: float) -> "QuadraticField2D":
        """Field with every velocity scaled by `factor` (linear in parameters)."""
        return QuadraticField2D(
            factor * self.Qx, factor * self.Qy,
            factor * self.Lx, factor * self.Ly,
            factor * self.mux, factor * self.muy,
        )

    def to_dict(self) -> dict:
        return {
            "Qx": self.Qx.tolist(),
            "Qy": self.Qy.tolist(),
            "Lx": self.Lx.tolist(),
            "Ly": self.Ly.tolist(),
            "mux": self.mux,
            "muy": self.muy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadraticField2D":
        return cls(d["Qx"], d["Qy"], d["Lx"], d["Ly"], d["mux"], d["muy"])


@dataclass(frozen=True)
class EnvModel:
    """Fitted wind and current fields plus fit provenance."""

    wind: QuadraticField2D
    current: QuadraticField2D
    fitted_at: str | None = None
    bounding_box: tuple[tuple[float, float], tuple[float, float]] | None = field(default=None)

    @classmethod
    def still(cls) -> "EnvModel":
        """No wind, no current."""
        return cls(QuadraticField2D.zero(), QuadraticField2D.zero())

    @classmethod
    def uniform(cls, wind_v=(0.0, 0.0), current_v=(0.0, 0.0)) -> "EnvModel":
        return cls(
            QuadraticField2D.constant(*wind_v),
            QuadraticField2D.constant(*current_v),
        )

    def n_parameters(self) -> int:
        return self.wind.params().size + self.current.params().size

    def contains(self, p) -> bool:
        """True if p lies inside the fitting bounding box (always True if unknown)."""
        if self.bounding_box is None:
            return True
        (xmin, ymin), (xmax, ymax) = self.bounding_box
        return xmin <= p[0] <= xmax and ymin <= p[1] <= ymax

    def scaled(self, factor: float) -> "EnvModel":
        return EnvModel(
            self.wind.scaled(factor),
            self.current.scaled(factor),
            fitted_at=self.fitted_at,
            bounding_box=self.bounding_box,
        )

    def to_dict(self) -> dict:
        d = {"wind": self.wind.to_dict(), "current": self.current.to_dict()}
        if self.fitted_at is not None:
            d["fitted_at"] = self.fitted_at
        if self.bounding_box is not None:
            d["bounding_box"] = [list(self.bounding_box[0]), list(self.bounding_box[1])]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvModel":
        bbox = d.get("bounding_box")
        if bbox is not None:
            bbox = (tuple(bbox[0]), tuple(bbox[1]))
        return cls(
            QuadraticField2D.from_dict(d["wind"]),
            QuadraticField2D.from_dict(d["current"]),
            fitted_at=d.get("fitted_at"),
            bounding_box=bbox,
        )


class FieldErrorStats:
    """Componentwise-Euclidean residual statistics of a field against samples."""

    def __init__(self, residuals: np.ndarray):
        residuals = np.asarray(residuals, dtype=float)
        if residuals.size == 0:
            raise ValueError("residual statistics need at least one sample")
        self._sorted = np.sort(residuals)
        self.max_abs_error = float(self._sorted[-1])
        self.rmse = float(math.sqrt(np.mean(residuals**2)))
        self.sample_count = int(residuals.size)

    def fraction_below(self, threshold: float) -> float:
        """Fraction of samples with residual <= threshold."""
        return float(np.searchsorted(self._sorted, threshold, side="right")) / self.sample_count

    def to_dict(self) -> dict:
        return {
            "max_abs_error": self.max_abs_error,
            "rmse": self.rmse,
            "sample_count": self.sample_count,
        }


def _parse_float(token: str, name: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"cannot parse {name} from {token!r}", line=line_no) from None
    if not math.isfinite(value):
        raise ParseError(f"{name} is not finite ({token!r})", line=line_no)
    return value


def parse_samples(stream) -> list[EnvSample]:
    """Parse environment samples from CSV text.

    `stream` is a file-like object or an iterable of lines with columns
    x_l,y_l,vx_wind,vy_wind,vx_current,vy_current (SI units).  A header
    row matching those names is skipped.  Raises ParseError on a
    malformed row and BoundsError when a velocity magnitude exceeds its
    sanity bound.
    """
    samples = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        if line_no == 1 and not _looks_numeric(tokens[0]):
            if [t.lower() for t in tokens] != list(CSV_HEADER):
                raise ParseError(
                    f"unexpected header {tokens!r}; expected {','.join(CSV_HEADER)}",
                    line=line_no,
                )
            continue
        if len(tokens) != 6:
            raise ParseError(f"expected 6 comma-separated values, got {len(tokens)}", line=line_no)
        values = [_parse_float(tok, name, line_no) for tok, name in zip(tokens, CSV_HEADER)]
        sample = EnvSample(*values)
        wind_speed = math.hypot(sample.v_x_wind, sample.v_y_wind)
        if wind_speed > MAX_WIND_SPEED:
            raise BoundsError(
                f"wind speed {wind_speed:.3g} m/s exceeds {MAX_WIND_SPEED} m/s",
                field="wind", line=line_no,
            )
        current_speed = math.hypot(sample.v_x_current, sample.v_y_current)
        if current_speed > MAX_CURRENT_SPEED:
            raise BoundsError(
                f"current speed {current_speed:.3g} m/s exceeds {MAX_CURRENT_SPEED} m/s",
                field="current", line=line_no,
            )
        samples.append(sample)
    return samples


def _looks_numeric(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _regressor(pts: np.ndarray) -> np.ndarray:
    """Rows [x^2/2, x*y, y^2/2, x, y, 1] matching the parameter order
    [Q_11, Q_12, Q_22, L_1, L_2, mu]."""
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([0.5 * x * x, x * y, 0.5 * y * y, x, y, np.ones_like(x)])


def fit_field(samples: list[EnvSample], which: str) -> QuadraticField2D:
    """Least-squares fit of a quadratic field to samples.

    `which` selects the velocity columns: "wind" or "current".  Each
    output component is fitted independently (6 parameters each).
    Positions are centered and scaled internally for conditioning; the
    returned field is expressed in the original coordinates.
    """
    if which not in ("wind", "current"):
        raise ValueError(f"which must be 'wind' or 'current', got {which!r}")
    if len(samples) < 6:
        raise InsufficientDataError(
            f"quadratic field fit needs at least 6 samples, got {len(samples)}"
        )
    pts = np.array([[s.x_l, s.y_l] for s in samples])
    vel = np.array([(s.wind if which == "wind" else s.current) for s in samples])

    center = pts.mean(axis=0)
    shifted = pts - center
    half_range = np.abs(shifted).max(axis=0)
    scale = np.where(half_range > 0, half_range, 1.0)
    scaled = shifted / scale

    A = _regressor(scaled)
    coeffs, _, rank, sv = np.linalg.lstsq(A, vel, rcond=None)
    if rank < 6:
        raise RankDeficientError(
            f"{which} field regressor is rank deficient (rank {rank} < 6); "
            "sample positions lie on a common conic", rank=int(rank),
        )
    cond = sv[0] / sv[-1]
    if cond > CONDITION_WARN_THRESHOLD:
        warnings.warn(
            f"{which} field regressor condition number {cond:.3g} exceeds "
            f"{CONDITION_WARN_THRESHOLD:.0e}; fit may be unreliable",
            RuntimeWarning, stacklevel=2,
        )

    comps = []
    D_inv = np.diag(1.0 / scale)
    for c in range(2):
        q11, q12, q22, l1, l2, mu = coeffs[:, c]
        Q_s = np.array([[q11, q12], [q12, q22]])
        L_s = np.array([l1, l2])
        # undo the coordinate scaling p_scaled = D^-1 (p - center)
        Q = D_inv @ Q_s @ D_inv
        L = L_s / scale
        # undo the centering p_shift = p - center
        L_full = L - center @ Q
        mu_full = mu - L @ center + 0.5 * center @ Q @ center
        comps.append((Q, L_full, mu_full))
    (Qx, Lx, mux), (Qy, Ly, muy) = comps
    return QuadraticField2D(Qx, Qy, Lx, Ly, mux, muy)


def fit_env_model(samples: list[EnvSample], fitted_at: str | None = None) -> EnvModel:
    """Fit wind and current fields from one sample set."""
    wind = fit_field(samples, "wind")
    current = fit_field(samples, "current")
    pts = np.array([[s.x_l, s.y_l] for s in samples])
    bbox = (
        (float(pts[:, 0].min()), float(pts[:, 1].min())),
        (float(pts[:, 0].max()), float(pts[:, 1].max())),
    )
    if bbox[0][0] == bbox[1][0] or bbox[0][1] == bbox[1][1]:
        # fit_field would have failed on rank before this can trigger,
        # but keep the invariant explicit
        raise RankDeficientError("degenerate bounding box after fit", rank=0)
    return EnvModel(wind, current, fitted_at=fitted_at, bounding_box=bbox)


def eval_field(field: QuadraticField2D, p):
    """Value, jacobian and the two component Hessians of a field at p."""
    return field.value(p), field.jacobian(p), field.hessians()


def error_stats(field: QuadraticField2D, samples: list[EnvSample], which: str) -> FieldErrorStats:
    """Euclidean residual statistics of `field` against the sample velocities."""
    if not samples:
        raise InsufficientDataError("error statistics need at least one sample")
    pts = np.array([[s.x_l, s.y_l] for s in samples])
    vel = np.array([(s.wind if which == "wind" else s.current) for s in samples])
    residuals = np.linalg.norm(field.value_many(pts) - vel, axis=1)
    return FieldErrorStats(residuals)
