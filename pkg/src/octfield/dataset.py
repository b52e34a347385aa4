"""Per-shape training data: normalized mesh, ground-truth octree, crops and voxel grids."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .field_oracle import MeshOracle, SampleSet, sample_octant
from .geometry import tri_box_overlap
from .mesh_io import TriMesh, normalize_unit_sphere, sample_surface
from .octree import ENLARGE, Octant, OctreeField, build_octree

log = logging.getLogger(__name__)


def voxelize_octant(mesh: TriMesh, octant: Octant, res: int = 32, factor: float = ENLARGE) -> np.ndarray:
    """Binary res^3 grid over the enlarged octant; a cell is set when a triangle touches it."""
    grid = np.zeros((res, res, res), dtype=np.uint8)
    e = factor * octant.half_size
    lo = octant.center - e
    cell = 2 * e / res
    tris = mesh.triangles
    near = np.all((tris.min(axis=1) <= lo + 2 * e) & (tris.max(axis=1) >= lo), axis=1)
    tris = tris[near]
    if not len(tris):
        return grid
    tlo = np.clip(np.floor((tris.min(axis=1) - lo) / cell).astype(np.int64), 0, res - 1)
    thi = np.clip(np.floor((tris.max(axis=1) - lo) / cell).astype(np.int64), 0, res - 1)
    ext = thi - tlo + 1
    per = ext.prod(axis=1)
    tid = np.repeat(np.arange(len(tris)), per)
    off = np.arange(per.sum()) - np.repeat(np.cumsum(per) - per, per)
    ey, ez = ext[tid, 1], ext[tid, 2]
    ix = tlo[tid, 0] + off // (ey * ez)
    iy = tlo[tid, 1] + (off // ez) % ey
    iz = tlo[tid, 2] + off % ez
    idx = np.stack([ix, iy, iz], axis=1)
    centers = lo + (idx + 0.5) * cell
    hit = tri_box_overlap(tris[tid], centers, cell / 2)
    grid[ix[hit], iy[hit], iz[hit]] = 1
    return grid


@dataclass
class ShapeData:
    name: str
    mesh: TriMesh
    tree: OctreeField
    occupied: list = field(default_factory=list)
    crops: dict = field(default_factory=dict)
    voxels: dict = field(default_factory=dict)

    @property
    def leaves(self):
        return [n for n in self.occupied if n.is_leaf]


def prepare_shape(mesh: TriMesh, cfg, seed: int, name: str = "shape", normalize: bool = True,
                  cache=None, with_voxels: bool = True) -> ShapeData:
    """Normalize, build the ground-truth tree, then sample every occupied octant.

    ``cache`` is an optional SampleCache keyed by (mesh digest, address, seed).
    """
    if normalize:
        mesh = normalize_unit_sphere(mesh)
    surf = sample_surface(mesh, cfg.criterion_samples, seed)
    tree = build_octree(mesh, surf, cfg.max_depth, cfg.tau)
    if tree.root.alpha and not tree.root.beta and cfg.max_depth >= 1:
        log.warning("%s: root octant is not subdivided; structure decoding always expands the root", name)
    oracle = MeshOracle(mesh)
    occupied = tree.occupied()
    data = ShapeData(name, mesh, tree, occupied)
    digest = mesh.digest()
    for k, node in enumerate(occupied):
        node_seed = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        key = (digest, node.address, node_seed)
        crop = cache.get(key) if cache is not None else None
        if crop is None:
            crop = sample_octant(
                oracle, node.center, node.half_size, cfg.samples_per_octant, node_seed,
                cfg.shell_fractions, cfg.shell_bounds, address=node.address,
            )
            if cache is not None:
                cache.put(key, crop)
        data.crops[node.address] = crop
        if with_voxels and node.is_leaf:
            data.voxels[node.address] = voxelize_octant(mesh, node, cfg.voxel_res)
    return data


class SampleCache:
    """In-memory map of SampleSets, persisted as SAMP chunks of a container file."""

    def __init__(self, path=None):
        from . import container

        self.path = path
        self.items: dict = {}
        if path is not None:
            try:
                for chunk in container.read_container(path).get("SAMP", []):
                    key, s = container.decode_sampleset(chunk)
                    self.items[key] = s
            except FileNotFoundError:
                pass
        self.dirty = False

    def get(self, key) -> SampleSet | None:
        return self.items.get(key)

    def put(self, key, value: SampleSet):
        self.items[key] = value
        self.dirty = True

    def save(self):
        from . import container

        if self.path is None or not self.dirty:
            return
        chunks = [("SAMP", container.encode_sampleset(k, v)) for k, v in self.items.items()]
        container.write_container(self.path, chunks)
        self.dirty = False
