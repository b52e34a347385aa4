"""Per-octant implicit occupancy decoder, overlap blending and decoder pretraining."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericFaultError
from .field_oracle import SampleSet
from .nn import F, ParamStore, Tensor, adam_step
from .octree import ENLARGE, Octant, OctreeField

log = logging.getLogger(__name__)


def normalize_local(x, octant: Octant, factor: float = ENLARGE) -> np.ndarray:
    """Map world points inside the enlarged octant to [-1, 1]^3."""
    u = (np.asarray(x, dtype=np.float64) - octant.center) / (factor * octant.half_size)
    if np.any(np.abs(u) > 1 + 1e-12):
        raise DomainError(f"point outside the enlarged bounds of octant {octant.address}")
    return u


def denormalize_local(u, octant: Octant, factor: float = ENLARGE) -> np.ndarray:
    return octant.center + np.asarray(u, dtype=np.float64) * (factor * octant.half_size)


def hat_weight(u: np.ndarray) -> np.ndarray:
    """Separable tent weight: 1 at the octant center, 0 on the enlarged faces."""
    return np.prod(np.clip(1.0 - np.abs(u), 0.0, None), axis=-1)


class ImplicitDecoder:
    """Dense stack mapping concat(latent, local xyz) to an occupancy logit."""

    def __init__(self, store: ParamStore, latent_dim: int, hidden: int = 256, layers: int = 4,
                 rng=None, prefix: str = "dgeo"):
        self.store = store
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.layers = layers
        self.prefix = prefix
        if f"{prefix}.out.W" not in store:
            rng = rng if rng is not None else np.random.default_rng(0)
            width = latent_dim + 3
            for i in range(layers):
                store.dense(f"{prefix}.h{i}", width, hidden, rng)
                width = hidden
            store.dense(f"{prefix}.out", hidden, 1, rng)

    def logits(self, latents: Tensor, coords) -> Tensor:
        h = F.concat([latents, Tensor(coords)], axis=1)
        for i in range(self.layers):
            h = F.leaky_relu(F.dense(h, self.store[f"{self.prefix}.h{i}.W"], self.store[f"{self.prefix}.h{i}.b"]))
        z = F.dense(h, self.store[f"{self.prefix}.out.W"], self.store[f"{self.prefix}.out.b"])
        return F.reshape(z, (-1,))

    def __call__(self, latents, coords) -> np.ndarray:
        """Occupancy for aligned rows of latents and local coordinates (no gradient)."""
        lat = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        c = np.atleast_2d(np.asarray(coords, dtype=np.float64))
        return F._sigmoid(self.logits(Tensor(lat), c).data)

    def param_names(self) -> list[str]:
        return self.store.names(self.prefix + ".")


def eval_octant(dec: ImplicitDecoder, c, x, octant: Octant) -> float | np.ndarray:
    u = normalize_local(x, octant)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    lat = np.broadcast_to(np.asarray(c, dtype=np.float64), (len(u), dec.latent_dim))
    out = dec(lat, u)
    return float(out[0]) if single else out


def blend_weights(x, octants: list[Octant]) -> list[tuple[Octant, float]]:
    """Renormalized tent weights of the octants whose enlarged box contains x.

    Returns an empty list when no octant covers x.
    """
    x = np.asarray(x, dtype=np.float64)
    raw = []
    for o in octants:
        u = (x - o.center) / (ENLARGE * o.half_size)
        w = float(hat_weight(u))
        if w > 0:
            raw.append((o, w))
    total = sum(w for _, w in raw)
    return [(o, w / total) for o, w in raw]


class _LevelIndex:
    """Direct-addressed grid of the occupied leaves at one depth."""

    def __init__(self, depth: int, leaf_ids: np.ndarray, centers: np.ndarray):
        self.depth = depth
        self.n = 2**depth
        self.half = 1.0 / self.n
        self.grid = np.full((self.n,) * 3, -1, dtype=np.int64)
        cell = np.rint((centers + 1.0) / (2 * self.half) - 0.5).astype(np.int64)
        self.grid[cell[:, 0], cell[:, 1], cell[:, 2]] = leaf_ids

    def pairs(self, pts: np.ndarray):
        base = np.floor((pts + 1.0) / (2 * self.half)).astype(np.int64)
        pi, li = [], []
        for off in np.ndindex(3, 3, 3):
            cell = base + np.array(off) - 1
            ok = np.all((cell >= 0) & (cell < self.n), axis=1)
            idx = np.flatnonzero(ok)
            leaf = self.grid[cell[idx, 0], cell[idx, 1], cell[idx, 2]]
            hit = leaf >= 0
            pi.append(idx[hit])
            li.append(leaf[hit])
        return np.concatenate(pi), np.concatenate(li)


class LocalField:
    """Blended occupancy field of an octree whose occupied nodes carry latents.

    A query is answered by the occupied leaves at the finest depth whose enlarged
    boxes contain it; points no leaf covers fall back to the root octant.
    """

    def __init__(self, decoder: ImplicitDecoder, tree: OctreeField, chunk: int = 200_000):
        self.decoder = decoder
        self.tree = tree
        self.chunk = chunk
        leaves = sorted(
            (n for n in tree.nodes() if n.alpha and n.is_leaf and n.geometry_latent is not None),
            key=lambda n: (n.depth, n.address),
        )
        self.leaves = leaves
        self.root = tree.root if tree.root.alpha and tree.root.geometry_latent is not None else None
        nodes = leaves + ([self.root] if self.root is not None and self.root not in leaves else [])
        self.nodes = nodes
        if nodes:
            self.centers = np.array([n.center for n in nodes])
            self.halves = np.array([n.half_size for n in nodes])
            self.latents = np.array([n.geometry_latent for n in nodes])
        self.root_id = nodes.index(self.root) if self.root is not None else -1
        depths = sorted({n.depth for n in leaves}, reverse=True)
        self.levels = []
        for dpt in depths:
            ids = np.array([i for i, n in enumerate(leaves) if n.depth == dpt])
            self.levels.append(_LevelIndex(dpt, ids, self.centers[ids]))

    @property
    def empty(self) -> bool:
        return not self.nodes

    def covered(self, pts: np.ndarray) -> np.ndarray:
        if self.empty:
            return np.zeros(len(pts), dtype=bool)
        lo = (self.centers - ENLARGE * self.halves[:, None]).min(axis=0)
        hi = (self.centers + ENLARGE * self.halves[:, None]).max(axis=0)
        return np.all((pts > lo) & (pts < hi), axis=1)

    def blend_pairs(self, pts: np.ndarray):
        """(point index, node index, weight) triples with per-point weights summing to 1."""
        n = len(pts)
        done = np.zeros(n, dtype=bool)
        P, N, W = [], [], []
        for level in self.levels:
            todo = np.flatnonzero(~done)
            if not len(todo):
                break
            pi, li = level.pairs(pts[todo])
            u = (pts[todo][pi] - self.centers[li]) / (ENLARGE * self.halves[li, None])
            w = hat_weight(u)
            keep = w > 0
            pi, li, w = todo[pi[keep]], li[keep], w[keep]
            P.append(pi)
            N.append(li)
            W.append(w)
            done[pi] = True
        if self.root_id >= 0:
            todo = np.flatnonzero(~done)
            u = pts[todo] / ENLARGE
            w = hat_weight(u)
            keep = w > 0
            P.append(todo[keep])
            N.append(np.full(int(keep.sum()), self.root_id))
            W.append(np.ones(int(keep.sum())))
        if not P:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        P, N, W = np.concatenate(P), np.concatenate(N), np.concatenate(W)
        order = np.lexsort((N, P))
        P, N, W = P[order], N[order], W[order]
        total = np.bincount(P, weights=W, minlength=n)
        return P, N, W / total[P]

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(len(pts))
        if self.empty:
            return out
        for s in range(0, len(pts), self.chunk):
            p = pts[s : s + self.chunk]
            P, N, W = self.blend_pairs(p)
            if not len(P):
                continue
            u = (p[P] - self.centers[N]) / (ENLARGE * self.halves[N, None])
            occ = np.empty(len(P))
            step = 65536
            for k in range(0, len(P), step):
                occ[k : k + step] = self.decoder(self.latents[N[k : k + step]], u[k : k + step])
            out[s : s + self.chunk] = np.bincount(P, weights=W * occ, minlength=len(p))
        return out


def eval_field(model: LocalField, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = model(x.reshape(-1, 3))
    return float(out[0]) if x.ndim == 1 else out


@dataclass
class CropBatch:
    """Flattened training points of several octant crops, in local coordinates."""

    coords: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    seg: np.ndarray
    n_crops: int


class CropSet:
    """Local-coordinate sample sets for a list of octants, with per-step subsampling."""

    def __init__(self, crops: list[SampleSet], octants: list[Octant]):
        if not crops:
            raise ValueError("need at least one crop")
        self.coords = [
            (c.points - o.center) / (ENLARGE * o.half_size) for c, o in zip(crops, octants)
        ]
        self.labels = [c.labels.astype(np.float64) for c in crops]
        self.weights = [c.weights for c in crops]

    def __len__(self):
        return len(self.coords)

    def batch(self, crop_ids, points_per_crop: int | None, rng) -> CropBatch:
        C, L, W, S = [], [], [], []
        for k, i in enumerate(crop_ids):
            n = len(self.coords[i])
            sel = np.arange(n) if points_per_crop is None or points_per_crop >= n else rng.choice(n, points_per_crop, replace=False)
            C.append(self.coords[i][sel])
            L.append(self.labels[i][sel])
            W.append(self.weights[i][sel])
            S.append(np.full(len(sel), k))
        return CropBatch(np.concatenate(C), np.concatenate(L), np.concatenate(W), np.concatenate(S), len(crop_ids))


def geo_loss(dec: ImplicitDecoder, latents: Tensor, batch: CropBatch) -> Tensor:
    """Per-crop weighted occupancy cross-entropy, sum_j w_j * bce_j / sum_j w_j; shape (K,)."""
    z = dec.logits(F.take(latents, batch.seg), batch.coords)
    per_point = F.bce_logits(z, batch.labels, batch.weights)
    num = F.segment_sum(per_point, batch.seg, batch.n_crops)
    den = np.bincount(batch.seg, weights=batch.weights, minlength=batch.n_crops)
    return F.mul(num, 1.0 / den)


@dataclass
class PretrainResult:
    codes: np.ndarray
    losses: list[float]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def pretrain_decoder(dec: ImplicitDecoder, crops: CropSet, epochs: int, seed: int, lr: float = 1e-3,
                     code_lr: float | None = None, points_per_crop: int | None = 512,
                     crops_per_step: int | None = None, code_init: float = 0.01) -> PretrainResult:
    """Jointly fit the decoder weights and one free latent code per crop.

    Minimizes the mean over crops of the weighted cross-entropy; each epoch visits
    every crop once in seeded random order.
    """
    rng = np.random.default_rng(seed)
    store = dec.store
    name = f"{dec.prefix}_codes"
    if name in store:
        del store.params[name]
        store.m.pop(name, None)
        store.v.pop(name, None)
        store.t.pop(name, None)
    codes = store.add(name, rng.normal(0.0, code_init, size=(len(crops), dec.latent_dim)))
    train = set(dec.param_names()) | {name}
    lrs = {name: code_lr} if code_lr else None
    losses = []
    step = crops_per_step or len(crops)
    for epoch in range(epochs):
        order = rng.permutation(len(crops))
        total, count = 0.0, 0
        for s in range(0, len(order), step):
            ids = order[s : s + step]
            batch = crops.batch(ids, points_per_crop, rng)
            store.zero_grad()
            per = geo_loss(dec, F.take(codes, ids), batch)
            loss = F.mean(per)
            if not np.isfinite(loss.item()):
                raise NumericFaultError(f"pretraining diverged at epoch {epoch}")
            loss.backward()
            adam_step(store, lr, names=train, lrs=lrs)
            total += loss.item() * len(ids)
            count += len(ids)
        losses.append(total / count)
        log.debug("pretrain epoch %d loss %.6f", epoch, losses[-1])
    return PretrainResult(codes.data.copy(), losses)


def crop_accuracy(dec: ImplicitDecoder, codes: np.ndarray, crops: CropSet) -> float:
    hits, n = 0, 0
    for i in range(len(crops)):
        pred = dec(np.repeat(codes[i : i + 1], len(crops.coords[i]), axis=0), crops.coords[i])
        hits += int(np.sum((pred > 0.5) == (crops.labels[i] > 0.5)))
        n += len(pred)
    return hits / n
