import numpy as np
import pytest

from octfield import shapes
from octfield.config import Config
from octfield.mesh_io import TriMesh


@pytest.fixture
def unit_cube():
    return shapes.box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


@pytest.fixture
def sphere():
    return shapes.icosphere(3, 0.8)


@pytest.fixture
def tiny_cfg():
    return Config(
        max_depth=2, voxel_res=8, encoder_channels=(2, 4, 4), feature_dim=4, root_dim=4,
        hidden_dim=6, decoder_hidden=6, decoder_layers=2, samples_per_octant=64,
        points_per_step=16, criterion_samples=1024, mc_resolution=16, iou_resolution=16,
        cd_samples=256, emd_samples=32, pretrain_epochs=2, epochs=2,
    ).validate()


def write_text(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def two_triangle_mesh(area_a=1.0, area_b=3.0):
    """Two disjoint right triangles with the given areas."""
    a = np.sqrt(2 * area_a)
    b = np.sqrt(2 * area_b)
    v = np.array([[0, 0, 0], [a, 0, 0], [0, a, 0], [5, 0, 0], [5 + b, 0, 0], [5, b, 0]], dtype=float)
    return TriMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))


# criterion number -> "PASS ..." / "FAIL ..." line, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
