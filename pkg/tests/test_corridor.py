import numpy as np
import pytest

from ferryplan.corridor import (
    Corridor,
    PathConstraintSet,
    corridor_from_polygon,
    evaluate_path_constraints,
)
from ferryplan.errors import CorridorError

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def point_in_polygon(vertices, p):
    # ray-casting oracle, independent of the half-plane representation
    n = len(vertices)
    inside = False
    x, y = p
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                inside = not inside
    return inside


class TestConstruction:
    def test_unit_square(self):
        c = corridor_from_polygon(UNIT_SQUARE)
        assert len(c.halfplanes) == 4
        assert c.contains([0.5, 0.5])
        assert np.all(c.evaluate([0.5, 0.5]) < 0)

    def test_normals_unit_length(self):
        c = corridor_from_polygon([(0, 0), (3, 0), (4, 5), (-1, 4)])
        norms = np.hypot(c.halfplanes[:, 0], c.halfplanes[:, 1])
        assert np.allclose(norms, 1.0, atol=1e-14)

    def test_triangle_membership_against_ray_casting(self):
        tri = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
        c = corridor_from_polygon(tri)
        assert c.contains([0.25, 0.25])
        assert not c.contains([1.0, 1.0])
        rng = np.random.default_rng(0)
        for p in rng.uniform(-0.5, 1.5, size=(200, 2)):
            expected = point_in_polygon(tri, p)
            got = c.contains(p)
            margin = np.max(c.evaluate(p))
            if abs(margin) > 1e-9:  # skip points numerically on the boundary
                assert got == expected

    def test_collinear_rejected(self):
        with pytest.raises(CorridorError):
            corridor_from_polygon([(0, 0), (1, 0), (2, 0), (0, 1)])

    def test_clockwise_rejected_names_vertex(self):
        with pytest.raises(CorridorError) as exc:
            corridor_from_polygon(list(reversed(UNIT_SQUARE)))
        assert exc.value.vertex is not None

    def test_too_few_vertices(self):
        with pytest.raises(CorridorError):
            corridor_from_polygon([(0, 0), (1, 0)])

    def test_unbounded_halfplanes_rejected(self):
        # a slab: only two opposing edges
        with pytest.raises(CorridorError):
            Corridor([(0, 1, -1), (0, -1, -1), (0, 1, -2)])

    def test_vertices_recovered(self):
        c = corridor_from_polygon(UNIT_SQUARE)
        v = c.vertices()
        assert sorted(map(tuple, np.round(v, 9))) == sorted(UNIT_SQUARE)


class TestEvaluate:
    def test_centroid_feasible_zero_input(self):
        c = corridor_from_polygon(UNIT_SQUARE)
        pcs = PathConstraintSet(c, F_limit=48000.0)
        vals = evaluate_path_constraints(pcs, [0.5, 0.5, 0, 0, 0, 0], [0, 0, 0])
        assert vals.shape == (5,)
        assert np.all(vals < 0)

    def test_force_bound_boundary(self):
        c = corridor_from_polygon(UNIT_SQUARE)
        pcs = PathConstraintSet(c, F_limit=48000.0)
        vals = evaluate_path_constraints(pcs, [0.5, 0.5, 0, 0, 0, 0], [48000.0, 0.0, 0.0])
        assert vals[-1] == pytest.approx(0.0, abs=1e-6)

    def test_signed_distance_oracle(self):
        # corridor values equal point-to-line signed distances for unit normals
        poly = [(0.0, 0.0), (4.0, 0.0), (5.0, 3.0), (1.0, 4.0)]
        c = corridor_from_polygon(poly)
        pcs = PathConstraintSet(c, F_limit=1000.0)
        rng = np.random.default_rng(1)
        for p in rng.uniform(-1, 6, size=(50, 2)):
            vals = evaluate_path_constraints(pcs, [p[0], p[1], 0, 0, 0, 0], [0, 0, 0])
            for i in range(len(poly)):
                a = np.array(poly[i])
                b = np.array(poly[(i + 1) % len(poly)])
                edge = b - a
                outward = np.array([edge[1], -edge[0]]) / np.linalg.norm(edge)
                expected = outward @ (p - a)
                assert vals[i] == pytest.approx(expected, abs=1e-9)

    def test_convexity_of_feasible_set(self):
        c = corridor_from_polygon([(0, 0), (10, -2), (14, 6), (4, 9), (-2, 5)])
        rng = np.random.default_rng(2)
        feasible = []
        while len(feasible) < 20:
            p = rng.uniform(-3, 15, size=2)
            if c.contains(p):
                feasible.append(p)
        for _ in range(100):
            i, j = rng.integers(0, len(feasible), size=2)
            t = rng.uniform()
            mid = t * feasible[i] + (1 - t) * feasible[j]
            assert c.contains(mid, margin=-1e-9)

    def test_shrunken_polygon_keeps_margin_points(self):
        poly = np.array([(0.0, 0.0), (8.0, 0.0), (8.0, 4.0), (0.0, 4.0)])
        center = poly.mean(axis=0)
        lam = 0.75
        shrunk = corridor_from_polygon(center + lam * (poly - center))
        big = corridor_from_polygon(poly)
        rng = np.random.default_rng(3)
        for p in rng.uniform(0, 8, size=(200, 2)):
            margin = -np.max(big.evaluate(p))
            # points deep enough inside survive the shrink
            if margin > (1 - lam) * 4.5:
                assert shrunk.contains(p)

    def test_json_round_trip(self):
        c = corridor_from_polygon(UNIT_SQUARE)
        again = Corridor.from_dict(c.to_dict())
        assert np.allclose(again.halfplanes, c.halfplanes)
        from_verts = Corridor.from_dict({"vertices": UNIT_SQUARE})
        p = [0.3, 0.7]
        assert np.allclose(np.sort(from_verts.evaluate(p)), np.sort(c.evaluate(p)))

    def test_invalid_f_limit(self):
        c = corridor_from_polygon(UNIT_SQUARE)
        with pytest.raises(ValueError):
            PathConstraintSet(c, F_limit=0.0)
