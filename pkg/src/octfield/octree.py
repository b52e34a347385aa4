"""Adaptive octree construction driven by surface occupancy and normal variance."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DomainError
from .geometry import tri_box_overlap
from .mesh_io import SurfaceSamples, TriMesh

MIN_VARIANCE_SAMPLES = 8
ENLARGE = 1.5


def child_offset(index: int) -> np.ndarray:
    """Unit offset (+-1 per axis) of a Morton child index; z is the most significant bit."""
    return np.array([1 if index & 1 else -1, 1 if index & 2 else -1, 1 if index & 4 else -1], dtype=np.float64)


def child_index(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    b = points >= center
    return b[:, 0].astype(np.int64) | (b[:, 1].astype(np.int64) << 1) | (b[:, 2].astype(np.int64) << 2)


@dataclass(eq=False)
class Octant:
    address: tuple
    center: np.ndarray
    half_size: float
    alpha: int = 0
    beta: int = 0
    geometry_latent: np.ndarray | None = None
    children: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.address)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def bounds(self):
        return self.center - self.half_size, self.center + self.half_size

    def enlarged_bounds(self, factor: float = ENLARGE):
        return enlarged_bounds(self, factor)

    def make_children(self) -> list:
        h = self.half_size / 2
        self.children = [
            Octant(self.address + (i,), self.center + h * child_offset(i), h) for i in range(8)
        ]
        return self.children


def enlarged_bounds(o: Octant, factor: float = ENLARGE):
    """Box around the octant center with side factor * (2 * half_size)."""
    e = factor * o.half_size
    return o.center - e, o.center + e


@dataclass(eq=False)
class OctreeField:
    root: Octant
    max_depth: int
    tau: float

    def nodes(self) -> Iterator[Octant]:
        """Breadth-first traversal, children in Morton order."""
        queue = deque([self.root])
        while queue:
            node = queue.popleft()
            yield node
            queue.extend(node.children)

    def levels(self) -> list[list[Octant]]:
        out: list[list[Octant]] = []
        for n in self.nodes():
            while len(out) <= n.depth:
                out.append([])
            out[n.depth].append(n)
        return out

    def occupied(self) -> list[Octant]:
        return [n for n in self.nodes() if n.alpha]

    def occupied_leaves(self) -> list[Octant]:
        return [n for n in self.nodes() if n.alpha and n.is_leaf]

    def find(self, address) -> Octant | None:
        node = self.root
        for i in address:
            if not node.children:
                return None
            node = node.children[i]
        return node

    def signature(self) -> dict:
        """address -> (alpha, beta), for structural comparison."""
        return {n.address: (n.alpha, n.beta) for n in self.nodes()}

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes())


def normal_variance(normals) -> float:
    """Sum over axes of the population variance of the normal components."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(n) == 0:
        raise DomainError("normal variance of an empty sample set is undefined")
    return float(n.var(axis=0).sum())


def should_subdivide(occupied, variance: float, depth: int, tau: float, d: int) -> bool:
    return bool(occupied) and depth < d and variance >= tau


def _patch_variance(normals: np.ndarray) -> float:
    if len(normals) < MIN_VARIANCE_SAMPLES:
        return 0.0
    return normal_variance(normals)


def build_octree(mesh: TriMesh, samples: SurfaceSamples, d: int, tau: float) -> OctreeField:
    """Breadth-first adaptive subdivision of [-1, 1]^3.

    An octant is occupied when it holds a surface sample or any triangle touches its
    box; it is split when occupied, shallower than ``d`` and its normal variance is at
    least ``tau``.
    """
    if d < 0:
        raise ValueError("max depth must be >= 0")
    tris = mesh.triangles
    pos = samples.positions
    root = Octant((), np.zeros(3), 1.0)
    tree = OctreeField(root, d, tau)
    in_root = np.all(np.abs(pos) <= 1.0, axis=1)
    # each queue entry carries the triangles and samples that may touch the node
    queue = deque([(root, np.arange(len(tris)), np.flatnonzero(in_root))])
    while queue:
        node, tri_ids, sample_ids = queue.popleft()
        if len(sample_ids):
            occupied = True
        elif len(tri_ids):
            hit = tri_box_overlap(tris[tri_ids], node.center, node.half_size)
            tri_ids = tri_ids[hit]
            occupied = bool(len(tri_ids))
        else:
            occupied = False
        node.alpha = int(occupied)
        if not occupied:
            continue
        var = _patch_variance(samples.normals[sample_ids])
        node.beta = int(should_subdivide(occupied, var, node.depth, tau, d))
        if not node.beta:
            continue
        if len(tri_ids):
            tri_ids = tri_ids[tri_box_overlap(tris[tri_ids], node.center, node.half_size)]
        which = child_index(pos[sample_ids], node.center)
        for child in node.make_children():
            queue.append((child, tri_ids, sample_ids[which == child.address[-1]]))
    return tree


def regular_grid_cells(level: int) -> int:
    if level < 1:
        raise ValueError("level must be >= 1")
    return 8**level


def adaptive_cell_count(tree: OctreeField | None, level: int) -> int:
    if level < 1:
        raise ValueError("level must be >= 1")
    if tree is None:
        return 0
    return sum(1 for n in tree.nodes() if n.depth == level and n.alpha)


def cell_count_table(tree: OctreeField, max_level: int | None = None) -> list[tuple[int, int, int]]:
    """(level, adaptive occupied cells, regular 8^level cells) rows."""
    top = max_level if max_level is not None else tree.max_depth
    return [(lv, adaptive_cell_count(tree, lv), regular_grid_cells(lv)) for lv in range(1, top + 1)]
