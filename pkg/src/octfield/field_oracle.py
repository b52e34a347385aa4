"""Ground-truth inside/outside and distance queries, and per-octant labeled sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import OracleUnavailableError, SamplingFailureError
from .geometry import ProjectedGrid, point_triangle_dist_sq, ray_crossings, tri_box_overlap
from .mesh_io import TriMesh, edge_use_counts

DEFAULT_SHELL_FRACTIONS = (0.4, 0.3, 0.2, 0.1)
DEFAULT_SHELL_BOUNDS = (0.02, 0.05, 0.15, np.inf)


class MeshOracle:
    """Acceleration structures for one mesh, built once and then read-only.

    Distance queries use a KD-tree over triangle centroids with a bounding-radius
    prune; inside tests bucket the triangles in three axis projections and take a
    majority vote over the three ray parities.
    """

    def __init__(self, mesh: TriMesh, require_watertight: bool = True, chunk: int = 65536):
        self.mesh = mesh
        self.tris = mesh.triangles
        self.chunk = chunk
        counts = edge_use_counts(mesh)
        self.bad_edges = int(np.count_nonzero(counts != 2))
        if require_watertight and self.bad_edges:
            raise OracleUnavailableError(self.bad_edges)
        self.centroids = self.tris.mean(axis=1)
        self.radius = float(np.linalg.norm(self.tris - self.centroids[:, None], axis=2).max())
        self._kd = cKDTree(self.centroids)
        self._grids = [ProjectedGrid(self.tris, a) for a in range(3)]

    @property
    def watertight(self) -> bool:
        return self.bad_edges == 0

    def distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(pts))
        for s in range(0, len(pts), self.chunk):
            out[s : s + self.chunk] = self._distance(pts[s : s + self.chunk])
        return out

    def _distance(self, pts):
        t = self.tris
        k = min(4, len(t))
        _, near = self._kd.query(pts, k=k)
        near = near.reshape(len(pts), k)
        p_rep = np.repeat(pts, k, axis=0)
        ids = near.ravel()
        upper = point_triangle_dist_sq(p_rep, t[ids, 0], t[ids, 1], t[ids, 2]).reshape(-1, k).min(axis=1)
        # any triangle closer than sqrt(upper) has its centroid within sqrt(upper) + radius
        lists = self._kd.query_ball_point(pts, np.sqrt(upper) + self.radius + 1e-12)
        lens = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
        cand = np.fromiter((i for x in lists for i in x), dtype=np.int64, count=int(lens.sum()))
        pidx = np.repeat(np.arange(len(pts)), lens)
        d2 = point_triangle_dist_sq(pts[pidx], t[cand, 0], t[cand, 1], t[cand, 2])
        best = np.full(len(pts), np.inf)
        np.minimum.at(best, pidx, d2)
        return np.sqrt(np.minimum(best, upper))

    def inside(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(pts), dtype=bool)
        for s in range(0, len(pts), self.chunk):
            p = pts[s : s + self.chunk]
            votes = np.zeros(len(p), dtype=np.int64)
            for grid in self._grids:
                pidx, tidx = grid.candidate_pairs(p)
                hit = ray_crossings(p[pidx], self.tris[tidx], grid.axis)
                crossings = np.bincount(pidx[hit], minlength=len(p))
                votes += crossings % 2
            out[s : s + self.chunk] = votes >= 2
        return out

    def query(self, points):
        return self.distance(points), self.inside(points)


def signed_query(mesh: TriMesh, p, oracle: MeshOracle | None = None):
    """Unsigned distance to the nearest triangle and the inside flag (1 = inside)."""
    oracle = oracle or MeshOracle(mesh)
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("query point must be finite")
    d, ins = oracle.query(p.reshape(-1, 3))
    if p.ndim == 1:
        return float(d[0]), int(ins[0])
    return d, ins.astype(np.int8)


@dataclass
class SampleSet:
    """Labeled query points for one octant. labels: 1 = inside."""

    address: tuple
    points: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.points)


def _surface_in_box(oracle, lo, hi):
    t = oracle.tris
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    # cheap bbox prefilter before the exact test
    near = np.all((t.min(axis=1) <= hi) & (t.max(axis=1) >= lo), axis=1)
    ids = np.flatnonzero(near)
    return ids[tri_box_overlap(t[ids], center, half)]


def _sample_on(oracle, tri_ids, n, rng):
    mesh = oracle.mesh
    areas = mesh.face_areas[tri_ids]
    pick = tri_ids[rng.choice(len(tri_ids), size=n, p=areas / areas.sum())]
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
    return np.einsum("nk,nkd->nd", bary, oracle.tris[pick]), mesh.face_normals[pick]


def sample_octant(
    oracle: MeshOracle,
    center,
    half_size: float,
    count: int,
    seed: int,
    fractions=DEFAULT_SHELL_FRACTIONS,
    bounds=DEFAULT_SHELL_BOUNDS,
    enlarge: float = 1.5,
    address: tuple = (),
) -> SampleSet:
    """Importance-sample labeled points around the surface inside an enlarged octant.

    Points are split across distance shells (bounds are multiples of the octant side)
    according to ``fractions``; each shell is sampled uniformly (inner shells by normal
    offsets from surface points, the unbounded shell uniformly in the box), rejected
    against shell membership, and weighted by shell volume over shell population.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    fractions = np.asarray(fractions, dtype=np.float64)
    bounds = np.asarray(bounds, dtype=np.float64)
    if len(fractions) != len(bounds) or not np.isclose(fractions.sum(), 1.0):
        raise ValueError("shell fractions must sum to 1 and match the bounds")
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    side = 2.0 * half_size
    ext = enlarge * half_size
    lo, hi = center - ext, center + ext
    box_volume = (2 * ext) ** 3

    quotas = np.floor(fractions * count).astype(np.int64)
    quotas[np.argmax(fractions)] += count - quotas.sum()
    tri_ids = _surface_in_box(oracle, lo, hi)
    inner_lo = np.concatenate([[0.0], bounds[:-1]]) * side
    inner_hi = bounds * side

    # clipped surface area estimate for inner shell volumes
    if len(tri_ids):
        probe, _ = _sample_on(oracle, tri_ids, 4096, rng)
        area_in = oracle.mesh.face_areas[tri_ids].sum() * np.mean(np.all((probe >= lo) & (probe <= hi), axis=1))
    else:
        area_in = 0.0

    pts, labels_d, weights = [], [], []
    budget = 100 * count
    used = 0
    volumes = np.zeros(len(bounds))
    for k, quota in enumerate(quotas):
        if quota == 0:
            continue
        unbounded = np.isinf(inner_hi[k])
        if unbounded:
            volumes[k] = max(box_volume - volumes[:k].sum(), 1e-3 * box_volume)
        else:
            volumes[k] = 2.0 * (inner_hi[k] - inner_lo[k]) * area_in
        got_p, got_d = [], []
        have = 0
        while have < quota:
            if used >= budget:
                raise SamplingFailureError(
                    f"shell {k} of octant {address} still short after {budget} proposals"
                )
            n = int(min(max(2 * (quota - have), 256), budget - used))
            used += n
            if unbounded:
                cand = lo + (hi - lo) * rng.random((n, 3))
            else:
                if not len(tri_ids):
                    continue
                base, normal = _sample_on(oracle, tri_ids, n, rng)
                mag = inner_lo[k] + (inner_hi[k] - inner_lo[k]) * rng.random(n)
                sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
                cand = base + (sign * mag)[:, None] * normal
            cand = cand[np.all((cand >= lo) & (cand <= hi), axis=1)]
            if not len(cand):
                continue
            d = oracle.distance(cand)
            keep = (d >= inner_lo[k]) & (d < inner_hi[k]) if k else d < inner_hi[k]
            got_p.append(cand[keep])
            got_d.append(d[keep])
            have += int(keep.sum())
        p = np.concatenate(got_p)[:quota]
        d = np.concatenate(got_d)[:quota]
        pts.append(p)
        labels_d.append(d)
        weights.append(np.full(quota, volumes[k] / quota))

    points = np.concatenate(pts)
    dist = np.concatenate(labels_d)
    w = np.concatenate(weights)
    w /= w.mean()
    labels = oracle.inside(points).astype(np.int8)
    return SampleSet(tuple(address), points, labels, w, dist)
