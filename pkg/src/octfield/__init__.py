"""Adaptive-octree local implicit fields with a hierarchical VAE."""

from .config import Config
from .mesh_io import TriMesh, load_mesh, normalize_unit_sphere, sample_surface, save_obj
from .octree import Octant, OctreeField, build_octree

__version__ = "0.1.0"

__all__ = [
    "Config",
    "Octant",
    "OctreeField",
    "TriMesh",
    "build_octree",
    "load_mesh",
    "normalize_unit_sphere",
    "sample_surface",
    "save_obj",
]
