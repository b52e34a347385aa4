import numpy as np
import pytest

from octfield import shapes
from octfield.config import Config
from octfield.dataset import prepare_shape, voxelize_octant
from octfield.hier_vae import HierVAE, interpolate, reparameterize, structure_match
from octfield.nn import F, Tensor, grad_check
from octfield.octree import Octant


def tiny_config(**kw):
    base = dict(
        max_depth=2, voxel_res=8, encoder_channels=(2, 4, 4), feature_dim=4, root_dim=4, hidden_dim=6,
        decoder_hidden=6, decoder_layers=2, samples_per_octant=16, points_per_step=10_000,
        criterion_samples=1024,
    )
    base.update(kw)
    return Config(**base).validate()


@pytest.fixture(scope="module")
def tiny():
    cfg = tiny_config()
    data = [
        prepare_shape(shapes.icosphere(2, 0.8), cfg, 0, "sphere"),
        prepare_shape(shapes.torus(0.6, 0.25, 16, 8), cfg, 1, "torus"),
        prepare_shape(shapes.box((-0.6, -0.5, -0.4), (0.6, 0.5, 0.4)), cfg, 2, "box"),
    ]
    return cfg, data


class TestVoxelize:
    def test_empty_region(self, sphere):
        o = Octant((), np.array([5.0, 5.0, 5.0]), 0.5)
        assert voxelize_octant(sphere, o, 8).sum() == 0

    def test_plane_slab(self):
        v = np.array([[-2, -2, 0.01], [2, -2, 0.01], [2, 2, 0.01], [-2, 2, 0.01]], dtype=float)
        from octfield.mesh_io import TriMesh
        m = TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))
        g = voxelize_octant(m, Octant((), np.zeros(3), 1.0), 16)
        per_z = g.sum(axis=(0, 1))
        assert set(np.flatnonzero(per_z)) <= {7, 8} and per_z.max() == 256

    def test_occupied_iff_alpha(self, tiny):
        _, data = tiny
        for s in data:
            for n in s.leaves:
                assert s.voxels[n.address].sum() > 0


class TestEncoder:
    def test_identical_children_without_index(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        x = np.random.default_rng(0).normal(size=(1, 1, cfg.feature_dim))
        eight = Tensor(np.repeat(x, 8, axis=1))
        got = m.encode_internal(eight, np.ones(8), np.zeros(8), use_index=False).data
        one = np.concatenate([x[0], [[1.0, 0.0]], np.zeros((1, 8))], axis=1)
        h = F.leaky_relu(m._dense("enc.g1", Tensor(one)))
        want = F.leaky_relu(m._dense("enc.g2", h)).data
        assert np.allclose(got, want, atol=1e-14)

    def test_absent_children_masked(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        s = data[0]
        mu0 = m.encode_shape(s).mu
        for n in s.tree.nodes():
            if not n.alpha:
                n.geometry_latent = np.full(cfg.feature_dim, 99.0)
        assert np.array_equal(m.encode_shape(s).mu, mu0)
        for n in s.tree.nodes():
            if not n.alpha:
                n.geometry_latent = None
        m.store["enc.null"].data = m.store["enc.null"].data + 1.0
        assert not np.array_equal(m.encode_shape(s).mu, mu0)

    def test_posterior_width_and_determinism(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        a, b = m.encode_shape(data[1]), m.encode_shape(data[1])
        assert a.mu.shape == (cfg.root_dim,)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.logvar, b.logvar)
        kl = F.kl_diag_gaussian(Tensor(a.mu), Tensor(a.logvar)).item()
        assert np.isfinite(kl)

    def test_zero_grid_fixed_vector(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        z = np.zeros((2, cfg.voxel_res, cfg.voxel_res, cfg.voxel_res))
        out = m.encode_leaf(z).data
        assert np.array_equal(out[0], out[1])


class TestDecoder:
    def test_eight_triples_in_range(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        a, b, g = m.decode_internal(Tensor(np.random.default_rng(1).normal(size=(3, cfg.feature_dim))))
        assert a.shape == (24,) and b.shape == (24,) and g.shape == (24, cfg.feature_dim)
        pa, pb = F._sigmoid(a.data), F._sigmoid(b.data)
        assert np.all((pa > 0) & (pa < 1) & (pb > 0) & (pb < 1))

    def test_zero_heads_give_half(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        for h in ("dec.alpha", "dec.beta"):
            m.store[h + ".W"].data[:] = 0
            m.store[h + ".b"].data[:] = 0
        a, b, _ = m.decode_internal(Tensor(np.ones((1, cfg.feature_dim))))
        assert np.all(F._sigmoid(a.data) == 0.5) and np.all(F._sigmoid(b.data) == 0.5)

    def _force(self, m, alpha_p, beta_p):
        for h, p in (("dec.alpha", alpha_p), ("dec.beta", beta_p)):
            m.store[h + ".W"].data[:] = 0
            m.store[h + ".b"].data[:] = np.log(p / (1 - p))

    def test_alpha_below_threshold_empty(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        self._force(m, 0.4, 0.9)
        t = m.decode_structure(np.zeros(cfg.root_dim))
        assert t.root.alpha == 0 and t.root.is_leaf and not t.occupied()

    def test_beta_low_depth_one(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        self._force(m, 0.9, 0.3)
        t = m.decode_structure(np.zeros(cfg.root_dim))
        assert t.depth == 1 and len(t.occupied_leaves()) == 8

    def test_depth_cap(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        self._force(m, 0.9, 0.9)
        for d in (1, 2, 3):
            t = m.decode_structure(np.zeros(cfg.root_dim), max_depth=d)
            assert t.depth == d and all(n.beta == 0 for n in t.nodes() if n.depth == d)

    def test_teacher_forcing_touches_ground_truth(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        z = Tensor(np.zeros((len(data), cfg.root_dim)))
        out = m.decode_teacher_forced(z, data)
        got = {(s, n.address) for n, s in zip(out["nodes"], out["node_shape"])}
        want = {(i, n.address) for i, s in enumerate(data) for n in s.occupied}
        assert got == want
        slots = sum(8 for s in data for n in s.tree.nodes() if n.children)
        assert len(out["ya"]) == slots == out["alpha_logits"].shape[0]


class TestLoss:
    def _loss(self, m, data, lam, seed=0):
        rng = np.random.default_rng(seed)
        eps = np.random.default_rng(99).standard_normal((len(data), m.cfg.root_dim))
        return m.batch_loss(data, rng, None, lam=lam, eps=eps)[1]

    def test_half_predictions_ln2(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        m.store["dgeo.out.W"].data[:] = 0
        m.store["dgeo.out.b"].data[:] = 0
        assert abs(self._loss(m, data, 10.0).geo - np.log(2)) < 1e-12

    def test_lambda_decomposition(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        a = self._loss(m, data, 10.0)
        b = self._loss(m, data, 20.0)
        assert b.geo == a.geo
        assert b.total - a.total == pytest.approx(10.0 * a.geo, rel=1e-12, abs=1e-12)
        assert a.total == pytest.approx(10.0 * a.geo + a.h + a.k + cfg.beta_kl * a.kl, rel=1e-12)

    def test_reparameterize_collapses(self):
        mu = Tensor(np.array([0.3, -1.2]))
        z = reparameterize(mu, Tensor(np.full(2, -30.0)), np.array([2.0, -3.0]))
        assert np.allclose(z.data, mu.data, atol=1e-6)

    def test_shared_parameters_single_copy(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        names = m.store.names()
        assert len(names) == len(set(names))
        m.store.zero_grad()
        total, _ = m.batch_loss(data, np.random.default_rng(0), None)
        total.backward()
        # both trees push gradient into the one shared aggregation weight
        g_both = m.store["enc.g1.W"].grad.copy()
        m.store.zero_grad()
        total, _ = m.batch_loss(data[:1], np.random.default_rng(0), None)
        total.backward()
        assert not np.array_equal(g_both, m.store["enc.g1.W"].grad)

    def test_end_to_end_gradcheck(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg)
        data = data[:2]
        eps = np.random.default_rng(5).standard_normal((len(data), cfg.root_dim))
        names = m.store.names()

        def fn(t):
            for k, v in t.items():
                m.store.params[k] = v
            return m.batch_loss(data, np.random.default_rng(0), None, eps=eps)[0]

        inputs = {k: m.store[k].data.copy() for k in names}
        err = grad_check(fn, inputs, max_entries=3, seed=1)
        assert err < 1e-3


class TestTrainingAndSampling:
    def test_loss_decreases_first_epochs(self, tiny):
        cfg, data = tiny
        m = HierVAE(cfg.replace(lr=1e-3))
        rng = np.random.default_rng(0)
        losses = [m.train_epoch(data, rng).total for _ in range(10)]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_interpolate_endpoints(self):
        a, b = np.array([1.0, 2.0]), np.array([-3.0, 0.5])
        assert np.array_equal(interpolate(a, b, 0), a)
        assert np.array_equal(interpolate(a, b, 1), b)
        assert np.array_equal(interpolate(a, a, 0.5), a)

    def test_sample_deterministic(self, tiny):
        cfg, _ = tiny
        m = HierVAE(cfg)
        z1, t1, _ = m.sample_shape(3)
        z2, t2, _ = m.sample_shape(3)
        assert np.array_equal(z1, z2) and t1.signature() == t2.signature()

    def test_structure_match_self(self, tiny):
        _, data = tiny
        assert structure_match(data[0].tree, data[0].tree) == 1.0
        assert structure_match(data[0].tree, data[1].tree) < 1.0
