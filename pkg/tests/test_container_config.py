import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from octfield import container
from octfield.config import Config, load_config, parse_config_text
from octfield.dataset import SampleCache
from octfield.errors import ContainerError, UsageError
from octfield.field_oracle import SampleSet
from octfield.mesh_io import normalize_unit_sphere, sample_surface
from octfield.nn import ParamStore
from octfield.octree import build_octree


class TestContainer:
    def test_header_and_chunks(self, tmp_path):
        p = tmp_path / "a.octf"
        container.write_container(p, [("CONF", b"{}"), ("PARM", b"xyz")])
        raw = p.read_bytes()
        assert raw[:4] == b"OCTF" and struct.unpack("<I", raw[4:8])[0] == 1
        assert container.read_container(p) == {"CONF": [b"{}"], "PARM": [b"xyz"]}

    def test_unknown_chunk_skipped(self, tmp_path, caplog):
        p = tmp_path / "u.octf"
        container.write_container(p, [("ZZZZ", b"junk"), ("CONF", b"{}")])
        assert container.read_container(p) == {"CONF": [b"{}"]}
        assert "unknown chunk" in caplog.text

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "b.octf"
        p.write_bytes(b"NOPE\x01\x00\x00\x00")
        with pytest.raises(ContainerError):
            container.read_container(p)
        container.write_container(p, [("CONF", b"0123456789")])
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(ContainerError):
            container.read_container(p)

    def test_bad_tag(self, tmp_path):
        with pytest.raises(ContainerError):
            container.write_container(tmp_path / "t", [("LONGTAG", b"")])

    @given(st.lists(st.integers(0, 7), max_size=12))
    def test_address_code_roundtrip(self, addr):
        assert container.code_address(container.address_code(tuple(addr))) == tuple(addr)

    @given(st.integers(0, 2**62))
    def test_varint_roundtrip(self, n):
        import io
        buf = io.BytesIO()
        container.write_varint(buf, n)
        buf.seek(0)
        assert container.read_varint(buf) == n

    def test_params_bit_exact(self):
        s = ParamStore()
        rng = np.random.default_rng(0)
        s.add("a.W", rng.normal(size=(3, 4)))
        s.add("b", np.array([np.pi, -0.0, 1e-300]))
        s.add("scalar", np.array(2.5))
        back = container.decode_params(container.encode_params(s.arrays()))
        assert list(back) == ["a.W", "b", "scalar"]
        for k, v in s.arrays().items():
            assert back[k].tobytes() == v.tobytes()

    def test_tree_roundtrip(self, sphere):
        m = normalize_unit_sphere(sphere)
        t = build_octree(m, sample_surface(m, 2048, 0), 3, 0.1)
        rng = np.random.default_rng(1)
        for n in t.occupied():
            n.geometry_latent = rng.normal(size=5)
        back = container.decode_tree(container.encode_tree(t))
        assert back.signature() == t.signature()
        assert back.max_depth == 3 and back.tau == 0.1
        for a, b in zip(t.nodes(), back.nodes()):
            assert np.array_equal(a.center, b.center) and a.half_size == b.half_size
            if a.geometry_latent is None:
                assert b.geometry_latent is None
            else:
                assert a.geometry_latent.tobytes() == b.geometry_latent.tobytes()
        assert container.encode_tree(back) == container.encode_tree(t)

    def test_sample_cache(self, tmp_path):
        p = tmp_path / "cache.octf"
        s = SampleSet((1, 2), np.ones((4, 3)), np.array([0, 1, 1, 0], np.int8), np.ones(4), np.zeros(4))
        c = SampleCache(p)
        c.put(("abc", (1, 2), 7), s)
        c.save()
        got = SampleCache(p).get(("abc", (1, 2), 7))
        assert np.array_equal(got.points, s.points) and np.array_equal(got.labels, s.labels)
        assert got.address == (1, 2)


class TestConfig:
    def test_defaults(self):
        c = Config().validate()
        assert (c.tau, c.max_depth, c.lambda_geo, c.beta_kl) == (0.1, 4, 10.0, 0.01)
        assert (c.samples_per_octant, c.voxel_res, c.feature_dim, c.root_dim, c.hidden_dim) == (10000, 32, 64, 128, 256)
        assert c.encoder_channels == (16, 32, 64, 128, 128)

    def test_key_value_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# comment\ntau = 0.2\nmax_depth=3\nencoder_channels = 8,8,8,8\nvoxel_res=16\nfinetune_voxel=false\n")
        c = load_config(p)
        assert c.tau == 0.2 and c.max_depth == 3 and c.encoder_channels == (8, 8, 8, 8)
        assert c.finetune_voxel is False

    def test_json_file_and_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"tau": 0.3, "seed": 4}))
        c = load_config(p, {"seed": "9"})
        assert c.tau == 0.3 and c.seed == 9

    def test_roundtrip_json(self):
        c = Config(tau=0.05, shell_bounds=(0.01, 0.1, float("inf")), shell_fractions=(0.5, 0.3, 0.2))
        back = Config.from_dict(json.loads(c.to_json()))
        assert back == c

    @pytest.mark.parametrize("bad", [
        {"tau": -1}, {"max_depth": 0}, {"voxel_res": 24}, {"voxel_res": 16},
        {"shell_fractions": (0.5, 0.5)}, {"samples_per_octant": 0}, {"geo_ramp": -1},
        {"geo_ramp_start": 0.0}, {"geo_ramp_start": 1.5}, {"lr_decay": 0.0},
    ])
    def test_validation(self, bad):
        with pytest.raises(UsageError):
            Config.from_dict(bad)

    def test_bad_value(self):
        with pytest.raises(UsageError):
            Config.from_dict({"tau": "abc"})

    def test_bad_line(self):
        with pytest.raises(UsageError):
            parse_config_text("tau 0.1")

    def test_unknown_keys_kept(self):
        assert Config.from_dict({"note": "x"}).extra == {"note": "x"}

    def test_geo_weight_schedule(self):
        from octfield.training import geo_weight

        c = Config(geo_ramp=10, geo_ramp_start=1e-3)
        w = [geo_weight(c, e) for e in range(12)]
        assert w[0] == pytest.approx(10.0 * 1e-3) and w[10] == w[11] == 10.0
        assert all(b > a for a, b in zip(w[:11], w[1:11]))
        assert w[5] == pytest.approx(10.0 * 1e-3 ** 0.5)
        assert geo_weight(Config(), 0) == 10.0

    def test_lr_factor_schedule(self):
        from octfield.training import lr_factor

        c = Config(geo_ramp=10, lr_decay=0.1)
        f = [lr_factor(c, e, 31) for e in range(31)]
        assert f[:11] == [1.0] * 11
        assert f[30] == pytest.approx(0.1) and f[20] == pytest.approx(0.55)
        assert all(b < a for a, b in zip(f[10:], f[11:]))
        assert all(lr_factor(Config(), e, 20) == 1.0 for e in range(20))
