"""Convex operation corridor and actuator-force path constraints.

The corridor is a bounded convex polygon stored as half-planes
s_i*x + q_i*y + c_i <= 0 with unit normals, one per edge.  Together
with the squared force bound on (X_a, Y_a) these form the path
constraint vector evaluated along a trajectory: all entries <= 0 means
feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CorridorError


class Corridor:
    """Bounded convex region of admissible positions."""

    def __init__(self, halfplanes):
        hp = np.asarray(halfplanes, dtype=float)
        if hp.ndim != 2 or hp.shape[1] != 3:
            raise CorridorError("halfplanes must be an (n, 3) array of (s, q, c)")
        if hp.shape[0] < 3:
            raise CorridorError(f"need at least 3 half-planes, got {hp.shape[0]}")
        norms = np.hypot(hp[:, 0], hp[:, 1])
        if np.any(norms == 0):
            raise CorridorError("half-plane with zero normal")
        self.halfplanes = hp / norms[:, None]
        self.halfplanes.setflags(write=False)
        self._check_bounded_nonempty()

    def _check_bounded_nonempty(self):
        # probe feasibility/boundedness along the axis directions via
        # the analytic center of a coarse grid; cheap and sufficient for
        # corridor-scale polygons
        inner = self.interior_point()
        if inner is None:
            raise CorridorError("corridor has empty interior")
        A = self.halfplanes[:, 0:2]
        # bounded iff every direction is blocked by some half-plane
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1)):
            ray = np.array(d, dtype=float)
            ray /= np.linalg.norm(ray)
            if np.all(A @ ray <= 1e-12):
                raise CorridorError(f"corridor is unbounded along direction {d}")

    def interior_point(self):
        """A strictly interior point (Chebyshev-style), or None if empty."""
        A = self.halfplanes[:, 0:2]
        c = self.halfplanes[:, 2]
        # maximize margin r s.t. A p + c + r <= 0 via a dense grid then a
        # few refinement sweeps; avoids an LP dependency
        lo, hi = self._coarse_box()
        best_p, best_m = None, -math.inf
        for _ in range(24):
            xs = np.linspace(lo[0], hi[0], 17)
            ys = np.linspace(lo[1], hi[1], 17)
            X, Y = np.meshgrid(xs, ys)
            pts = np.column_stack([X.ravel(), Y.ravel()])
            margins = -(pts @ A.T + c).max(axis=1)
            i = int(np.argmax(margins))
            if margins[i] > best_m:
                best_m, best_p = margins[i], pts[i]
            span = (hi - lo) / 4.0
            lo = best_p - span
            hi = best_p + span
            if np.all(span < 1e-9 * (1.0 + np.abs(best_p))):
                break
        if best_m <= 0:
            return None
        return np.asarray(best_p)

    def _coarse_box(self):
        # any feasible polygon of interest lies within the box spanned by
        # the half-plane offsets
        scale = max(1.0, float(np.max(np.abs(self.halfplanes[:, 2]))))
        return np.array([-4 * scale, -4 * scale]), np.array([4 * scale, 4 * scale])

    def evaluate(self, p) -> np.ndarray:
        """Signed distances to every edge (negative inside)."""
        p = np.asarray(p, dtype=float)
        return self.halfplanes[:, 0:2] @ p + self.halfplanes[:, 2]

    def contains(self, p, margin: float = 0.0) -> bool:
        return bool(np.all(self.evaluate(p) <= -margin))

    def vertices(self) -> np.ndarray:
        """Polygon vertices recovered from adjacent edge intersections, CCW."""
        A = self.halfplanes[:, 0:2]
        c = self.halfplanes[:, 2]
        n = len(c)
        pts = []
        for i in range(n):
            for j in range(i + 1, n):
                M = np.array([A[i], A[j]])
                if abs(np.linalg.det(M)) < 1e-12:
                    continue
                v = np.linalg.solve(M, -np.array([c[i], c[j]]))
                if np.all(A @ v + c <= 1e-6 * max(1.0, float(np.abs(v).max()))):
                    pts.append(v)
        pts = np.array(pts)
        center = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
        return pts[order]

    def bounding_box(self):
        v = self.vertices()
        return (float(v[:, 0].min()), float(v[:, 1].min())), \
               (float(v[:, 0].max()), float(v[:, 1].max()))

    def to_dict(self) -> dict:
        return {"halfplanes": self.halfplanes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Corridor":
        if "vertices" in d:
            return corridor_from_polygon(d["vertices"])
        return cls(d["halfplanes"])


def corridor_from_polygon(vertices) -> Corridor:
    """Corridor from a strictly convex counterclockwise polygon.

    Each edge (a, b) yields the half-plane with outward normal
    (dy, -dx); the polygon interior then satisfies all constraints
    strictly.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise CorridorError("vertices must be an (n, 2) array")
    n = verts.shape[0]
    if n < 3:
        raise CorridorError(f"need at least 3 vertices, got {n}")
    hp = []
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        nxt = verts[(i + 2) % n]
        d = b - a
        cross = d[0] * (nxt[1] - b[1]) - d[1] * (nxt[0] - b[0])
        if cross <= 0:
            raise CorridorError(
                f"vertices are not strictly convex counterclockwise at vertex {(i + 1) % n}",
                vertex=(i + 1) % n,
            )
        # outward normal for CCW winding
        s, q = d[1], -d[0]
        norm = math.hypot(s, q)
        c = -(s * a[0] + q * a[1]) / norm
        hp.append((s / norm, q / norm, c))
    return Corridor(hp)


@dataclass(frozen=True)
class PathConstraintSet:
    """Corridor half-planes plus the squared actuator-force bound."""

    corridor: Corridor
    F_limit: float

    def __post_init__(self):
        if self.F_limit <= 0:
            raise ValueError("F_limit must be positive")

    @property
    def n_constraints(self) -> int:
        return len(self.corridor.halfplanes) + 1

    def evaluate(self, state, control) -> np.ndarray:
        """I corridor values then X_a^2 + Y_a^2 - F_limit^2; <= 0 is feasible."""
        x = np.asarray(state, dtype=float) if not hasattr(state, "as_array") else state.as_array()
        u = np.asarray(control, dtype=float) if not hasattr(control, "as_array") else control.as_array()
        vals = self.corridor.evaluate(x[0:2])
        force = u[0] * u[0] + u[1] * u[1] - self.F_limit**2
        return np.concatenate([vals, [force]])


def evaluate_path_constraints(constraints: PathConstraintSet, state, control) -> np.ndarray:
    return constraints.evaluate(state, control)
