"""Vectorized triangle kernels: triangle/box overlap, closest-point distance, ray crossings.

All functions operate on aligned batches of (triangle, query) pairs so callers can
build candidate pair lists with whatever acceleration they like.
"""

from __future__ import annotations

import numpy as np


def tri_box_overlap(tris: np.ndarray, centers: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Separating-axis test for closed triangles against closed axis-aligned boxes.

    tris: (K, 3, 3); centers: (K, 3) or (3,); half: anything broadcastable to (K, 3),
    e.g. a scalar or (K, 1) for cubes. Touching counts as overlap.
    """
    tris = np.asarray(tris, dtype=np.float64)
    k = len(tris)
    centers = np.broadcast_to(np.asarray(centers, dtype=np.float64), (k, 3))
    half = np.broadcast_to(np.asarray(half, dtype=np.float64), (k, 3))

    v0 = tris[:, 0] - centers
    v1 = tris[:, 1] - centers
    v2 = tris[:, 2] - centers
    ok = np.ones(k, dtype=bool)

    # box face normals
    lo = np.minimum(np.minimum(v0, v1), v2)
    hi = np.maximum(np.maximum(v0, v1), v2)
    ok &= np.all((lo <= half) & (hi >= -half), axis=1)

    edges = (v1 - v0, v2 - v1, v0 - v2)
    for e in edges:
        for axis in range(3):
            # cross(unit_axis, e)
            a = np.zeros((k, 3))
            a[:, (axis + 1) % 3] = -e[:, (axis + 2) % 3]
            a[:, (axis + 2) % 3] = e[:, (axis + 1) % 3]
            p0 = np.einsum("kd,kd->k", v0, a)
            p1 = np.einsum("kd,kd->k", v1, a)
            p2 = np.einsum("kd,kd->k", v2, a)
            r = np.einsum("kd,kd->k", half, np.abs(a))
            ok &= ~((np.minimum(np.minimum(p0, p1), p2) > r) | (np.maximum(np.maximum(p0, p1), p2) < -r))

    # triangle plane
    n = np.cross(edges[0], edges[1])
    d = np.einsum("kd,kd->k", n, v0)
    r = np.einsum("kd,kd->k", half, np.abs(n))
    ok &= np.abs(d) <= r
    return ok


def point_triangle_dist_sq(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distance from points to triangles, pairwise over the leading axis.

    Region classification follows the closest-point-on-triangle construction in
    Ericson, Real-Time Collision Detection, section 5.1.5.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("kd,kd->k", ab, ap)
    d2 = np.einsum("kd,kd->k", ac, ap)
    bp = p - b
    d3 = np.einsum("kd,kd->k", ab, bp)
    d4 = np.einsum("kd,kd->k", ac, bp)
    cp = p - c
    d5 = np.einsum("kd,kd->k", ab, cp)
    d6 = np.einsum("kd,kd->k", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))

    closest = a + v_in[:, None] * ab + w_in[:, None] * ac
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        nonlocal closest
        m = mask & ~done
        closest = np.where(m[:, None], value, closest)
        done[m] = True

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    assign((d6 >= 0) & (d5 <= d6), c)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac)
    assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t_bc[:, None] * (c - b))
    diff = p - closest
    return np.einsum("kd,kd->k", diff, diff)


def _edge_function(pu, pv, qu, qv, xu, xv):
    """Orientation of x relative to directed edge p->q, evaluated with canonical endpoint
    order so a shared edge yields exactly opposite values for its two directions.
    Returns (value, top_left) where top_left marks edges that own points lying on them."""
    swap = (pu > qu) | ((pu == qu) & (pv > qv))
    au, av = np.where(swap, qu, pu), np.where(swap, qv, pv)
    bu, bv = np.where(swap, pu, qu), np.where(swap, pv, qv)
    val = (bu - au) * (xv - av) - (bv - av) * (xu - au)
    val = np.where(swap, -val, val)
    du, dv = qu - pu, qv - pv
    top_left = (dv > 0) | ((dv == 0) & (du < 0))
    return val, top_left


def ray_crossings(points: np.ndarray, tris: np.ndarray, axis: int) -> np.ndarray:
    """For aligned (point, triangle) pairs: does the ray from the point along +axis
    cross the triangle? Shared edges and vertices are counted exactly once."""
    u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
    pu, pv, pa = points[:, u_ax], points[:, v_ax], points[:, axis]
    tu, tv, ta = tris[:, :, u_ax], tris[:, :, v_ax], tris[:, :, axis]
    area = (tu[:, 1] - tu[:, 0]) * (tv[:, 2] - tv[:, 0]) - (tu[:, 2] - tu[:, 0]) * (tv[:, 1] - tv[:, 0])
    # orient every projected triangle counter-clockwise
    flip = area < 0
    i1 = np.where(flip, 2, 1)
    i2 = np.where(flip, 1, 2)
    rows = np.arange(len(tris))
    u0, v0, a0 = tu[:, 0], tv[:, 0], ta[:, 0]
    u1, v1, a1 = tu[rows, i1], tv[rows, i1], ta[rows, i1]
    u2, v2, a2 = tu[rows, i2], tv[rows, i2], ta[rows, i2]

    e0, own0 = _edge_function(u1, v1, u2, v2, pu, pv)
    e1, own1 = _edge_function(u2, v2, u0, v0, pu, pv)
    e2, own2 = _edge_function(u0, v0, u1, v1, pu, pv)
    inside = ((e0 > 0) | ((e0 == 0) & own0)) & ((e1 > 0) | ((e1 == 0) & own1)) & ((e2 > 0) | ((e2 == 0) & own2))
    inside &= area != 0
    total = e0 + e1 + e2
    with np.errstate(divide="ignore", invalid="ignore"):
        hit_a = (e0 * a0 + e1 * a1 + e2 * a2) / total
    return inside & (hit_a > pa)


class ProjectedGrid:
    """Uniform 2D bucket grid of triangles projected along one axis."""

    def __init__(self, tris: np.ndarray, axis: int, cells: int | None = None):
        self.axis = axis
        self.u_ax, self.v_ax = (axis + 1) % 3, (axis + 2) % 3
        uv = tris[:, :, [self.u_ax, self.v_ax]]
        lo = uv.min(axis=(0, 1))
        hi = uv.max(axis=(0, 1))
        self.lo = lo
        self.hi = hi
        m = len(tris)
        g = cells or int(np.clip(np.sqrt(m), 1, 256))
        self.g = g
        span = np.maximum(hi - lo, 1e-12)
        self.scale = g / span
        tlo = np.clip(((uv.min(axis=1) - lo) * self.scale).astype(np.int64), 0, g - 1)
        thi = np.clip(((uv.max(axis=1) - lo) * self.scale).astype(np.int64), 0, g - 1)
        nu = thi[:, 0] - tlo[:, 0] + 1
        nv = thi[:, 1] - tlo[:, 1] + 1
        per = nu * nv
        tri_idx = np.repeat(np.arange(m), per)
        offs = np.arange(per.sum()) - np.repeat(np.cumsum(per) - per, per)
        cu = tlo[tri_idx, 0] + offs // nv[tri_idx]
        cv = tlo[tri_idx, 1] + offs % nv[tri_idx]
        cell = cu * g + cv
        order = np.argsort(cell, kind="stable")
        self.tri_ids = tri_idx[order]
        self.start = np.searchsorted(cell[order], np.arange(g * g))
        self.stop = np.searchsorted(cell[order], np.arange(g * g), side="right")

    def candidate_pairs(self, points: np.ndarray):
        """Return (point_index, triangle_index) arrays for bucket candidates."""
        uv = points[:, [self.u_ax, self.v_ax]]
        valid = np.all((uv >= self.lo) & (uv <= self.hi), axis=1)
        c = np.clip(np.floor((uv - self.lo) * self.scale).astype(np.int64), 0, self.g - 1)
        cell = c[:, 0] * self.g + c[:, 1]
        counts = np.where(valid, self.stop[cell] - self.start[cell], 0)
        pidx = np.repeat(np.arange(len(points)), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        tidx = self.tri_ids[self.start[cell][pidx] + offs]
        return pidx, tidx
