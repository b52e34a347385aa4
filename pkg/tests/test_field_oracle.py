import numpy as np
import pytest

from octfield import shapes
from octfield.errors import OracleUnavailableError
from octfield.field_oracle import MeshOracle, sample_octant, signed_query
from octfield.geometry import point_triangle_dist_sq, tri_box_overlap
from octfield.mesh_io import TriMesh

from oracles import triangle_touches_box


class TestGeometryKernels:
    def test_tri_box_against_clipping_oracle(self):
        rng = np.random.default_rng(0)
        tris = rng.uniform(-1.5, 1.5, size=(3000, 3, 3))
        centers = rng.uniform(-0.5, 0.5, size=(3000, 3))
        half = rng.uniform(0.1, 0.6, size=3000)
        got = tri_box_overlap(tris, centers, half[:, None])
        want = [triangle_touches_box(t, c - h, c + h) for t, c, h in zip(tris, centers, half)]
        assert np.array_equal(got, np.array(want))

    def test_touching_counts(self):
        tri = np.array([[[1.0, -1, -1], [1.0, 1, -1], [1.0, 0, 1]]])
        assert tri_box_overlap(tri, np.zeros(3), 1.0)[0]
        assert not tri_box_overlap(tri + [1e-9, 0, 0], np.zeros(3), 1.0)[0]

    def test_point_triangle_distance_brute(self):
        rng = np.random.default_rng(1)
        a, b, c = (rng.normal(size=(200, 3)) for _ in range(3))
        p = rng.normal(size=(200, 3)) * 2
        got = point_triangle_dist_sq(p, a, b, c)
        # dense barycentric search over the closed triangle
        s = np.linspace(0, 1, 301)
        u, v = np.meshgrid(s, s)
        keep = u + v <= 1
        u, v = u[keep], v[keep]
        for i in range(0, 200, 20):
            q = a[i] + u[:, None] * (b[i] - a[i]) + v[:, None] * (c[i] - a[i])
            brute = ((q - p[i]) ** 2).sum(axis=1).min()
            assert got[i] <= brute + 1e-12
            assert brute - got[i] < 5e-3 * max(1.0, brute)


class TestOracle:
    def test_unit_cube_queries(self, unit_cube):
        assert signed_query(unit_cube, [0.5, 0.5, 0.5]) == (0.5, 1)
        d, ins = signed_query(unit_cube, [10.0, 0.5, 0.5])
        assert d == pytest.approx(9.0, abs=1e-12) and ins == 0

    def test_surface_point_distance_zero(self, unit_cube):
        d, _ = signed_query(unit_cube, [0.25, 0.5, 0.0])
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_open_mesh_unavailable(self):
        m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), np.array([[0, 1, 2]]))
        with pytest.raises(OracleUnavailableError) as exc:
            MeshOracle(m)
        assert exc.value.bad_edges == 3
        assert not MeshOracle(m, require_watertight=False).watertight

    def test_sphere_inside_agrees_with_analytic(self, sphere):
        o = MeshOracle(sphere)
        rng = np.random.default_rng(2)
        p = rng.uniform(-1, 1, size=(20000, 3))
        r = np.linalg.norm(p, axis=1)
        far = np.abs(r - 0.8) > 0.02
        assert np.array_equal(o.inside(p[far]), r[far] < 0.8)

    def test_grid_aligned_queries_on_box(self):
        # lattice points hit shared edges and vertices of the axis-aligned box
        b = shapes.box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
        g = np.linspace(-0.75, 0.75, 13)
        p = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        strict = np.all(np.abs(p) < 0.5 - 1e-9, axis=1)
        outside = np.any(np.abs(p) > 0.5 + 1e-9, axis=1)
        got = MeshOracle(b).inside(p)
        assert np.all(got[strict]) and not np.any(got[outside])

    def test_distance_matches_brute_force(self, sphere):
        o = MeshOracle(sphere)
        rng = np.random.default_rng(3)
        p = rng.uniform(-1.2, 1.2, size=(300, 3))
        t = sphere.triangles
        brute = np.array([
            np.sqrt(point_triangle_dist_sq(np.repeat(q[None], len(t), 0), t[:, 0], t[:, 1], t[:, 2]).min())
            for q in p
        ])
        assert np.allclose(o.distance(p), brute, atol=1e-12)


class TestSampleOctant:
    def test_weights_labels_and_shells(self, sphere):
        o = MeshOracle(sphere)
        s = sample_octant(o, np.array([0.5, 0.5, 0.5]), 0.5, 4000, seed=0)
        assert len(s) == 4000
        assert set(np.unique(s.labels)) <= {0, 1}
        assert np.all(s.weights > 0) and s.weights.mean() == pytest.approx(1.0)
        lo, hi = np.full(3, 0.5 - 0.75), np.full(3, 0.5 + 0.75)
        assert np.all((s.points >= lo) & (s.points <= hi))
        # the first 40% lie within 0.02 * side of the surface
        assert np.all(s.distances[:1600] < 0.02)
        assert np.array_equal(s.labels, o.inside(s.points).astype(np.int8))

    def test_deterministic(self, sphere):
        o = MeshOracle(sphere)
        a = sample_octant(o, np.zeros(3), 1.0, 500, seed=4)
        b = sample_octant(o, np.zeros(3), 1.0, 500, seed=4)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)

    def test_bad_fractions(self, sphere):
        with pytest.raises(ValueError):
            sample_octant(MeshOracle(sphere), np.zeros(3), 1.0, 10, 0, fractions=(0.5, 0.2), bounds=(0.1, np.inf))
