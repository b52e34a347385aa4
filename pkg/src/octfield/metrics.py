"""Reconstruction metrics: Chamfer distance, EMD, volumetric IoU and F-score."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError, MetricUndefinedError
from .extraction import DOMAIN, grid_points
from .mesh_io import TriMesh, sample_surface

CD_SCALE = 1e4
EMD_SCALE = 1e2
EXACT_EMD_MAX = 256


def _points(a, name):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise MetricUndefinedError(f"{name} is an empty point set")
    return a


def chamfer(A, B) -> float:
    """Mean squared nearest-neighbour distance A->B plus B->A."""
    A, B = _points(A, "A"), _points(B, "B")
    da, _ = cKDTree(B).query(A)
    db, _ = cKDTree(A).query(B)
    return float(np.mean(da**2) + np.mean(db**2))


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching of a square matrix; returns the column of each row.

    Shortest augmenting paths with row/column potentials, O(n^3).
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    col[p[1:] - 1] = np.arange(n)
    return col


def auction(cost: np.ndarray, rel_gap: float = 0.01, max_phases: int = 40):
    """Epsilon-scaling Jacobi auction for the minimum-cost assignment.

    Returns (column of each row, certified relative gap). The gap compares the
    primal cost with the dual bound implied by the final prices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    benefit = -cost
    prices = np.zeros(n)
    eps = max(float(np.ptp(cost)), 1e-12) / 4.0
    rows = np.arange(n)
    for _ in range(max_phases):
        person_obj = np.full(n, -1, dtype=np.int64)
        obj_person = np.full(n, -1, dtype=np.int64)
        while True:
            free = np.flatnonzero(person_obj < 0)
            if not len(free):
                break
            val = benefit[free] - prices
            top2 = np.argpartition(-val, 1, axis=1)[:, :2] if n > 1 else np.zeros((len(free), 2), dtype=np.int64)
            v0 = val[np.arange(len(free)), top2[:, 0]]
            v1 = val[np.arange(len(free)), top2[:, 1]]
            swap = v1 > v0
            best = np.where(swap, top2[:, 1], top2[:, 0])
            first = np.maximum(v0, v1)
            second = np.minimum(v0, v1) if n > 1 else first
            bid = prices[best] + (first - second) + eps
            # highest bid per object wins; ties go to the lower person index
            order = np.lexsort((free, -bid, best))
            objs = best[order]
            lead = np.ones(len(order), dtype=bool)
            lead[1:] = objs[1:] != objs[:-1]
            win_obj = objs[lead]
            win_person = free[order][lead]
            prev = obj_person[win_obj]
            person_obj[prev[prev >= 0]] = -1
            obj_person[win_obj] = win_person
            person_obj[win_person] = win_obj
            prices[win_obj] = bid[order][lead]
        total = cost[rows, person_obj].sum()
        dual = -(prices.sum() + np.max(benefit - prices, axis=1).sum())
        gap = (total - dual) / max(total, 1e-300)
        if gap <= rel_gap or eps < 1e-12:
            return person_obj, max(gap, 0.0)
        eps /= 5.0
    return person_obj, max(gap, 0.0)


def emd(A, B, method: str = "auto", rel_gap: float = 0.01) -> float:
    """Mean Euclidean distance under the optimal one-to-one matching of A and B.

    ``method``: "exact" (Hungarian), "auction" (certified within ``rel_gap``) or
    "auto" (exact up to 256 points).
    """
    A, B = _points(A, "A"), _points(B, "B")
    if len(A) != len(B):
        raise DimensionError(f"EMD needs equal-size sets, got {len(A)} and {len(B)}")
    cost = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    if method == "auto":
        method = "exact" if len(A) <= EXACT_EMD_MAX else "auction"
    if method == "exact":
        col = hungarian(cost)
    elif method == "auction":
        col, _ = auction(cost, rel_gap)
    else:
        raise ValueError(f"unknown EMD method {method!r}")
    return float(cost[np.arange(len(A)), col].mean())


def volumetric_iou(field_a, field_b, resolution: int = 64, bound: float = DOMAIN, iso: float = 0.5,
                   return_flag: bool = False):
    """IoU of {field > iso} sampled at the centers of an R^3 grid over [-bound, bound]^3.

    Two empty fields give IoU 1; with ``return_flag`` the result is (iou, both_empty).
    """
    step = 2 * bound / resolution
    pts = grid_points(resolution, bound - step / 2)
    a = np.asarray(field_a(pts)) > iso
    b = np.asarray(field_b(pts)) > iso
    union = np.count_nonzero(a | b)
    empty = union == 0
    iou = 1.0 if empty else np.count_nonzero(a & b) / union
    return (iou, empty) if return_flag else iou


def fscore(A, B, tau: float | None = None, ratio: float = 0.01):
    """(F1, precision, recall) with precision measured from A to B.

    ``tau`` defaults to ``ratio`` times the bounding-box diagonal of A and B together,
    so swapping A and B exchanges precision and recall.
    """
    A, B = _points(A, "A"), _points(B, "B")
    if tau is None:
        both = np.concatenate([A, B])
        tau = ratio * float(np.linalg.norm(both.max(axis=0) - both.min(axis=0)))
    da, _ = cKDTree(B).query(A)
    db, _ = cKDTree(A).query(B)
    precision = float(np.mean(da <= tau))
    recall = float(np.mean(db <= tau))
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return f1, precision, recall


@dataclass
class MetricsReport:
    cd: float
    emd: float
    miou: float
    f1: float
    cd_samples: int
    emd_samples: int
    iou_resolution: int
    fscore_tau: float
    precision: float = float("nan")
    recall: float = float("nan")
    iou_both_empty: bool = False
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["cd_units"] = "1e-4"
        d["emd_units"] = "1e-2"
        return json.dumps(d, indent=2, sort_keys=True)


def compare(pred: TriMesh, truth: TriMesh, pred_field, truth_field, cd_samples=10000, emd_samples=1024,
            iou_resolution=64, fscore_ratio=0.01, seed=0) -> MetricsReport:
    """All four metrics between a predicted and a reference surface.

    Fields are callables returning occupancy; meshes provide surface samples.
    """
    if len(pred.faces) == 0 or len(truth.faces) == 0:
        raise MetricUndefinedError("cannot sample an empty mesh")
    pa = sample_surface(pred, cd_samples, seed).positions
    pb = sample_surface(truth, cd_samples, seed + 1).positions
    ea = sample_surface(pred, emd_samples, seed + 2).positions
    eb = sample_surface(truth, emd_samples, seed + 3).positions
    both = np.concatenate([pa, pb])
    tau = fscore_ratio * float(np.linalg.norm(both.max(axis=0) - both.min(axis=0)))
    f1, prec, rec = fscore(pa, pb, tau)
    iou, empty = volumetric_iou(pred_field, truth_field, iou_resolution, return_flag=True)
    return MetricsReport(
        cd=chamfer(pa, pb) * CD_SCALE,
        emd=emd(ea, eb) * EMD_SCALE,
        miou=float(iou),
        f1=f1,
        cd_samples=cd_samples,
        emd_samples=emd_samples,
        iou_resolution=iou_resolution,
        fscore_tau=tau,
        precision=prec,
        recall=rec,
        iou_both_empty=bool(empty),
    )
