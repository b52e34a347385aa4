import json

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from octfield import shapes
from octfield.errors import DimensionError, MetricUndefinedError
from octfield.extraction import DOMAIN, marching_cubes, sample_grid
from octfield.field_oracle import MeshOracle
from octfield.mesh_io import edge_use_counts
from octfield.metrics import (
    MetricsReport, auction, chamfer, compare, emd, fscore, hungarian, volumetric_iou,
)

from oracles import SphereField, brute_chamfer, lens_iou

RNG = np.random.default_rng(0)


class TestMarchingCubes:
    def test_sphere_vertex_radii(self):
        m = marching_cubes(SphereField(0.5), 64)
        r = np.linalg.norm(m.vertices, axis=1)
        assert np.abs(r - 0.5).max() <= 2.1 / 64

    def test_constant_zero_empty(self):
        m = marching_cubes(lambda p: np.zeros(len(p)), 16)
        assert len(m.faces) == 0 and len(m.vertices) == 0

    def test_constant_one_closed_box(self):
        m = marching_cubes(lambda p: np.ones(len(p)), 16)
        assert np.all(edge_use_counts(m) == 2)
        ext = np.abs(m.vertices).max(axis=0)
        h = 2 * DOMAIN / 15
        assert np.allclose(ext, DOMAIN + h / 2)

    def test_outward_orientation(self):
        m = marching_cubes(SphereField(0.5), 32)
        c = m.triangles.mean(axis=1)
        assert np.mean(np.einsum("nd,nd->n", m.face_normals, c) > 0) > 0.99

    def test_closed_output(self):
        m = marching_cubes(SphereField(0.6, (0.2, 0.0, 0.0)), 32)
        assert np.all(edge_use_counts(m) == 2)

    def test_uncovered_cells_shortcut(self):
        calls = []

        class Partial:
            def covered(self, p):
                return np.all(np.abs(p) < 0.6, axis=1)

            def __call__(self, p):
                calls.append(len(p))
                return SphereField(0.5)(p)

        vol = sample_grid(Partial(), 16)
        assert sum(calls) < 16**3 and vol.max() == 1.0

    def test_small_resolution_rejected(self):
        with pytest.raises(ValueError):
            marching_cubes(SphereField(), 4)


class TestChamfer:
    def test_identical(self):
        a = RNG.normal(size=(50, 3))
        assert chamfer(a, a) == 0.0

    def test_two_points(self):
        assert chamfer([[0, 0, 0]], [[0, 0, 1]]) == 2.0

    def test_brute_force(self):
        a, b = RNG.normal(size=(64, 3)), RNG.normal(size=(64, 3))
        assert abs(chamfer(a, b) - brute_chamfer(a, b)) < 1e-12

    def test_symmetric_and_order_free(self):
        a, b = RNG.normal(size=(40, 3)), RNG.normal(size=(30, 3))
        assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-15)
        assert chamfer(a[::-1], b[RNG.permutation(30)]) == pytest.approx(chamfer(a, b), abs=1e-15)

    def test_empty(self):
        with pytest.raises(MetricUndefinedError):
            chamfer(np.zeros((0, 3)), np.zeros((3, 3)))


class TestEMD:
    def test_identical(self):
        a = RNG.normal(size=(20, 3))
        assert emd(a, a) == 0.0

    def test_two_point_swap(self):
        a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
        b = np.array([[1.1, 0, 0], [0.2, 0, 0]])
        ident = cdist(a, b)[[0, 1], [0, 1]].mean()
        swap = cdist(a, b)[[0, 1], [1, 0]].mean()
        assert emd(a, b) == pytest.approx(min(ident, swap), abs=1e-15)

    @pytest.mark.parametrize("n", [1, 5, 64, 128])
    def test_hungarian_optimal(self, n):
        c = RNG.random((n, n))
        r, col = linear_sum_assignment(c)
        mine = hungarian(c)
        assert sorted(mine.tolist()) == list(range(n))
        assert c[np.arange(n), mine].sum() == pytest.approx(c[r, col].sum(), abs=1e-10)

    def test_auction_within_one_percent(self):
        a, b = RNG.normal(size=(64, 3)), RNG.normal(size=(64, 3))
        c = cdist(a, b)
        r, col = linear_sum_assignment(c)
        exact = c[r, col].mean()
        approx = emd(a, b, method="auction")
        assert exact - 1e-12 <= approx <= exact * 1.01

    def test_auction_gap_certificate(self):
        c = cdist(RNG.normal(size=(300, 3)), RNG.normal(size=(300, 3)))
        col, gap = auction(c)
        r, opt = linear_sum_assignment(c)
        assert sorted(col.tolist()) == list(range(300))
        assert gap <= 0.01
        assert c[np.arange(300), col].sum() <= c[r, opt].sum() * (1 + gap) + 1e-9

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            emd(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_symmetric(self):
        a, b = RNG.normal(size=(32, 3)), RNG.normal(size=(32, 3))
        assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-12)


class TestIoU:
    def test_identical(self):
        assert volumetric_iou(SphereField(0.5), SphereField(0.5), 32) == 1.0

    def test_disjoint_boxes(self):
        a = lambda p: np.all(np.abs(p - [0.5, 0, 0]) < 0.3, axis=1).astype(float)
        b = lambda p: np.all(np.abs(p + [0.5, 0, 0]) < 0.3, axis=1).astype(float)
        assert volumetric_iou(a, b, 32) == 0.0

    def test_shifted_spheres_lens(self):
        got = volumetric_iou(SphereField(0.5), SphereField(0.5, (0.1, 0, 0)), 64)
        assert abs(got - lens_iou(0.5, 0.1)) < 0.02

    def test_both_empty_flag(self):
        z = lambda p: np.zeros(len(p))
        assert volumetric_iou(z, z, 16, return_flag=True) == (1.0, True)

    def test_symmetric(self):
        a, b = SphereField(0.5), SphereField(0.4, (0.2, 0.1, 0))
        assert volumetric_iou(a, b, 32) == volumetric_iou(b, a, 32)


class TestFScore:
    def test_identical(self):
        a = RNG.normal(size=(100, 3))
        assert fscore(a, a)[0] == 1.0

    def test_swap_exchanges_precision_recall(self):
        a, b = RNG.normal(size=(200, 3)), RNG.normal(size=(150, 3)) * 1.1
        f1, p, r = fscore(a, b, ratio=0.05)
        f1b, pb, rb = fscore(b, a, ratio=0.05)
        assert (p, r) == (rb, pb) and f1 == pytest.approx(f1b)

    def test_far_sets(self):
        assert fscore(np.zeros((3, 3)), np.ones((3, 3)) * 10)[0] == 0.0


class TestReport:
    def test_compare_sphere_with_itself(self):
        m = shapes.icosphere(3, 0.7)
        o = MeshOracle(m)
        field = lambda p: o.inside(p).astype(float)
        rep = compare(m, m, field, field, cd_samples=10000, emd_samples=128, iou_resolution=24)
        assert rep.miou == 1.0
        assert 0.0 <= rep.cd < 5 and rep.f1 > 0.9
        d = json.loads(rep.to_json())
        assert d["cd_units"] == "1e-4" and d["cd_samples"] == 10000

    def test_empty_mesh(self):
        from octfield.mesh_io import TriMesh
        e = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(MetricUndefinedError):
            compare(e, shapes.icosphere(1), None, None)

    def test_report_fields_finite(self):
        rep = MetricsReport(1.0, 2.0, 0.5, 0.7, 10, 10, 16, 0.01)
        d = json.loads(rep.to_json())
        assert all(np.isfinite(d[k]) for k in ("cd", "emd", "miou", "f1"))
