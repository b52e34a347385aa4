"""Isosurface extraction of occupancy fields on a uniform grid."""

from __future__ import annotations

import numpy as np
from skimage import measure

from .mesh_io import TriMesh

DOMAIN = 1.05


def grid_points(resolution: int, bound: float = DOMAIN) -> np.ndarray:
    g = np.linspace(-bound, bound, resolution)
    return np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)


def sample_grid(field, resolution: int, bound: float = DOMAIN) -> np.ndarray:
    """Evaluate a field on the R^3 lattice; points the field does not cover read as 0."""
    pts = grid_points(resolution, bound)
    vals = np.zeros(len(pts))
    covered = getattr(field, "covered", None)
    mask = covered(pts) if covered is not None else np.ones(len(pts), dtype=bool)
    if mask.any():
        vals[mask] = field(pts[mask])
    return vals.reshape((resolution,) * 3)


def marching_cubes(field, resolution: int = 64, iso: float = 0.5, bound: float = DOMAIN) -> TriMesh:
    """Triangulate the ``iso`` level set of ``field`` over [-bound, bound]^3.

    ``field`` maps (N, 3) points to occupancy. The lattice is padded with one layer
    of zeros so surfaces reaching the domain boundary still close.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    vol = sample_grid(field, resolution, bound)
    return volume_to_mesh(vol, iso, bound)


def volume_to_mesh(vol: np.ndarray, iso: float = 0.5, bound: float = DOMAIN) -> TriMesh:
    r = vol.shape[0]
    h = 2 * bound / (r - 1)
    padded = np.pad(vol, 1, constant_values=0.0)
    if not (padded.min() < iso < padded.max()):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(padded, level=iso, spacing=(h, h, h))
    verts = verts - (bound + h)
    # reverse the winding so face normals point out of the occupied region
    return TriMesh(verts.astype(np.float64), faces[:, ::-1].astype(np.int64))
