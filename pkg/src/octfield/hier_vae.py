"""Recursive octree VAE: voxel-CNN leaf encoder, shared child aggregation, root posterior,
and a shared expansion decoder with occupancy/subdivision classifiers."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import Config
from .dataset import ShapeData
from .errors import NumericFaultError
from .local_implicit import CropSet, ImplicitDecoder, LocalField, geo_loss
from .nn import F, ParamStore, Tensor, adam_step
from .octree import Octant, OctreeField

log = logging.getLogger(__name__)

ONE_HOT = np.eye(8)
# initial posterior log-variance; a small starting sigma keeps early losses comparable across epochs
LOGVAR_INIT = -8.0


@dataclass
class RootPosterior:
    mu: np.ndarray
    logvar: np.ndarray

    def sample(self, rng) -> np.ndarray:
        return self.mu + np.exp(0.5 * self.logvar) * rng.standard_normal(self.mu.shape)


@dataclass
class LossReport:
    geo: float
    h: float
    k: float
    kl: float
    total: float

    def as_dict(self) -> dict:
        return {"L_geo": self.geo, "L_h": self.h, "L_k": self.k, "L_KL": self.kl, "total": self.total}


def reparameterize(mu, logvar, eps) -> Tensor:
    return F.add(mu, F.mul(F.exp(F.mul(logvar, 0.5)), eps))


def interpolate(code_a, code_b, t: float) -> np.ndarray:
    a = np.asarray(code_a, dtype=np.float64)
    b = np.asarray(code_b, dtype=np.float64)
    if t == 0:
        return a.copy()
    if t == 1:
        return b.copy()
    return (1.0 - t) * a + t * b


def structure_match(pred: OctreeField, truth: OctreeField) -> float:
    """Fraction of nodes (union of both address sets) present in both with equal (alpha, beta)."""
    a, b = pred.signature(), truth.signature()
    keys = set(a) | set(b)
    return sum(1 for k in keys if a.get(k) == b.get(k)) / len(keys)


class HierVAE:
    """All learned maps of the hierarchical model, sharing one ParamStore."""

    def __init__(self, cfg: Config, store: ParamStore | None = None, seed: int | None = None):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        s = self.store
        fdim, hdim, rdim = cfg.feature_dim, cfg.hidden_dim, cfg.root_dim
        chans = (1,) + tuple(cfg.encoder_channels)
        self.n_blocks = len(cfg.encoder_channels)
        if "vox.fc.W" not in s:
            for i in range(self.n_blocks):
                s.conv3d(f"vox.conv{i}", chans[i], chans[i + 1], 4, rng)
            s.dense("vox.fc", chans[-1], fdim, rng)
            s.dense("enc.g1", fdim + 2 + 8, hdim, rng)
            s.dense("enc.g2", hdim, fdim, rng)
            s.add("enc.null", rng.normal(0.0, 0.1, fdim))
            s.dense("enc.mu", fdim, rdim, rng)
            s.dense("enc.logvar", fdim, rdim, rng, zero=True)
            s["enc.logvar.b"].data[:] = LOGVAR_INIT
            s.dense("dec.root", rdim, fdim, rng)
            s.dense("dec.g2", fdim, 8 * hdim, rng)
            s.dense("dec.alpha", hdim, 1, rng)
            s.dense("dec.beta", hdim, 1, rng)
            s.dense("dec.g1", hdim, fdim, rng)
        self.decoder = ImplicitDecoder(s, fdim, cfg.decoder_hidden, cfg.decoder_layers, rng)

    # -- building blocks -------------------------------------------------------

    def _dense(self, name, x):
        return F.dense(x, self.store[f"{name}.W"], self.store[f"{name}.b"])

    def encode_leaf(self, voxels) -> Tensor:
        """Voxel CNN over a (N, r, r, r) stack of grids; returns (N, feature_dim)."""
        v = np.asarray(voxels, dtype=np.float64)
        if v.ndim == 3:
            v = v[None]
        x = Tensor(v[:, None])
        for i in range(self.n_blocks):
            x = F.conv3d(x, self.store[f"vox.conv{i}.W"], self.store[f"vox.conv{i}.b"], stride=2, pad=1)
            # a 1^3 map has no spatial statistics to normalize
            if np.prod(x.shape[2:]) > 1:
                x = F.instance_norm(x)
            x = F.leaky_relu(x)
        x = F.reshape(x, (x.shape[0], -1))
        return F.leaky_relu(self._dense("vox.fc", x))

    def encode_internal(self, child_feats: Tensor, alpha, beta, use_index: bool = True) -> Tensor:
        """Aggregate (P, 8, F) child features plus their indicators into (P, F) parents."""
        p = child_feats.shape[0]
        a = np.asarray(alpha, dtype=np.float64).reshape(p, 8, 1)
        b = np.asarray(beta, dtype=np.float64).reshape(p, 8, 1)
        onehot = np.broadcast_to(ONE_HOT if use_index else np.zeros((8, 8)), (p, 8, 8))
        x = F.concat([child_feats, Tensor(a), Tensor(b), Tensor(onehot)], axis=2)
        x = F.reshape(x, (p * 8, -1))
        h = F.leaky_relu(self._dense("enc.g1", x))
        h = F.max_over_set(F.reshape(h, (p, 8, -1)), axis=1)
        return F.leaky_relu(self._dense("enc.g2", h))

    def decode_internal(self, parent: Tensor):
        """Expand (P, F) parent features into 8 child slots each.

        Returns alpha logits (P*8,), beta logits (P*8,), child features (P*8, F).
        """
        p = parent.shape[0]
        h = F.leaky_relu(self._dense("dec.g2", parent))
        h = F.reshape(h, (p * 8, self.cfg.hidden_dim))
        a = F.reshape(self._dense("dec.alpha", h), (-1,))
        b = F.reshape(self._dense("dec.beta", h), (-1,))
        # latents stay linear so they can reach the whole pretrained code space
        g = self._dense("dec.g1", h)
        return a, b, g

    def root_feature(self, z: Tensor) -> Tensor:
        return self._dense("dec.root", z)

    # -- encoder ---------------------------------------------------------------

    def encode_trees(self, shapes: list[ShapeData]):
        """Bottom-up encoding of a batch of ground-truth trees; returns (mu, logvar) tensors."""
        null = F.reshape(self.store["enc.null"], (1, -1))
        leaf_nodes = [n for s in shapes for n in s.leaves]
        leaf_index = {id(n): i for i, n in enumerate(leaf_nodes)}
        leaf_feats = self.encode_leaf(np.stack([s.voxels[n.address] for s in shapes for n in s.leaves]))

        by_depth: dict[int, list[Octant]] = {}
        for s in shapes:
            for n in s.tree.nodes():
                if n.children:
                    by_depth.setdefault(n.depth, []).append(n)
        internal: dict[int, tuple[Tensor, dict]] = {}
        for depth in sorted(by_depth, reverse=True):
            parents = by_depth[depth]
            deeper = internal.get(depth + 1)
            sources = [leaf_feats]
            offset = len(leaf_nodes)
            deeper_index = {}
            if deeper is not None:
                sources.append(deeper[0])
                deeper_index = deeper[1]
                offset += deeper[0].shape[0]
            sources.append(null)
            null_row = offset
            rows, alpha, beta = [], [], []
            for parent in parents:
                for c in parent.children:
                    if not c.alpha:
                        rows.append(null_row)
                    elif c.children:
                        rows.append(len(leaf_nodes) + deeper_index[id(c)])
                    else:
                        rows.append(leaf_index[id(c)])
                    alpha.append(c.alpha)
                    beta.append(c.beta)
            table = F.concat(sources, axis=0)
            child = F.reshape(F.take(table, rows), (len(parents), 8, -1))
            feats = self.encode_internal(child, alpha, beta)
            internal[depth] = (feats, {id(p): i for i, p in enumerate(parents)})

        roots = []
        for s in shapes:
            r = s.tree.root
            if r.children:
                roots.append(F.take(internal[0][0], [internal[0][1][id(r)]]))
            else:
                roots.append(F.take(leaf_feats, [leaf_index[id(r)]]))
        root = F.concat(roots, axis=0)
        return self._dense("enc.mu", root), self._dense("enc.logvar", root)

    def encode_shape(self, shape: ShapeData) -> RootPosterior:
        mu, logvar = self.encode_trees([shape])
        return RootPosterior(mu.data[0].copy(), logvar.data[0].copy())

    # -- decoder ---------------------------------------------------------------

    def decode_teacher_forced(self, z: Tensor, shapes: list[ShapeData]):
        """Decode along the ground-truth trees.

        Returns a dict with the decoded features of every occupied node (aligned with
        ``nodes``), and the classifier logits/targets of every expanded child slot.
        """
        rows = self.root_feature(z)
        row_nodes = [s.tree.root for s in shapes]
        row_shape = list(range(len(shapes)))
        occ_feats, occ_nodes, occ_shape = [], [], []
        slot = {"a": [], "b": [], "ya": [], "yb": [], "shape": []}
        while row_nodes:
            keep = [i for i, n in enumerate(row_nodes) if n.alpha]
            if keep:
                occ_feats.append(F.take(rows, keep))
                occ_nodes += [row_nodes[i] for i in keep]
                occ_shape += [row_shape[i] for i in keep]
            expand = [i for i, n in enumerate(row_nodes) if n.children]
            if not expand:
                break
            a, b, g = self.decode_internal(F.take(rows, expand))
            children = [c for i in expand for c in row_nodes[i].children]
            cshape = [row_shape[i] for i in expand for _ in range(8)]
            slot["a"].append(a)
            slot["b"].append(b)
            slot["ya"] += [c.alpha for c in children]
            slot["yb"] += [c.beta for c in children]
            slot["shape"] += cshape
            rows, row_nodes, row_shape = g, children, cshape
        out = {
            "feats": F.concat(occ_feats, axis=0),
            "nodes": occ_nodes,
            "node_shape": np.array(occ_shape),
        }
        if slot["a"]:
            out["alpha_logits"] = F.concat(slot["a"], axis=0)
            out["beta_logits"] = F.concat(slot["b"], axis=0)
        out["ya"] = np.array(slot["ya"], dtype=np.float64)
        out["yb"] = np.array(slot["yb"], dtype=np.float64)
        out["slot_shape"] = np.array(slot["shape"], dtype=np.int64)
        return out

    def decode_structure(self, z, max_depth: int | None = None) -> OctreeField:
        """Free-running top-down expansion with the 0.5 thresholds and a hard depth cap."""
        d = self.cfg.max_depth if max_depth is None else max_depth
        ta, tb = self.cfg.alpha_threshold, self.cfg.beta_threshold
        z = Tensor(np.asarray(z, dtype=np.float64).reshape(1, -1))
        root = Octant((), np.zeros(3), 1.0, alpha=1, beta=int(d >= 1))
        feats = self.root_feature(z)
        root.geometry_latent = feats.data[0].copy()
        tree = OctreeField(root, d, float("nan"))
        frontier = [root] if root.beta else []
        while frontier:
            a, b, g = self.decode_internal(Tensor(np.stack([n.geometry_latent for n in frontier])))
            pa = F._sigmoid(a.data)
            pb = F._sigmoid(b.data)
            nxt = []
            for i, node in enumerate(frontier):
                for j, child in enumerate(node.make_children()):
                    k = 8 * i + j
                    child.alpha = int(pa[k] > ta)
                    if child.alpha:
                        child.beta = int(pb[k] > tb and child.depth < d)
                        child.geometry_latent = g.data[k].copy()
                        if child.beta:
                            nxt.append(child)
            frontier = nxt
        if root.children and not any(c.alpha for c in root.children):
            root.children = []
            root.alpha = root.beta = 0
            root.geometry_latent = None
        return tree

    def field(self, tree: OctreeField) -> LocalField:
        return LocalField(self.decoder, tree)

    def field_from_latent(self, z):
        tree = self.decode_structure(z)
        return tree, self.field(tree)

    def reconstruct(self, shape: ShapeData):
        post = self.encode_shape(shape)
        tree, fld = self.field_from_latent(post.mu)
        return post, tree, fld

    # -- training --------------------------------------------------------------

    def batch_loss(self, shapes: list[ShapeData], rng, points_per_crop=None, lam=None, beta_kl=None,
                   eps=None, crops_cache=None):
        """Forward pass of the total loss on a batch; returns (total tensor, LossReport)."""
        cfg = self.cfg
        lam = cfg.lambda_geo if lam is None else lam
        beta_kl = cfg.beta_kl if beta_kl is None else beta_kl
        n = len(shapes)
        mu, logvar = self.encode_trees(shapes)
        if eps is None:
            eps = rng.standard_normal(mu.shape)
        z = reparameterize(mu, logvar, eps)
        dec = self.decode_teacher_forced(z, shapes)

        # geometry term over every occupied octant at every level
        crops = crops_cache if crops_cache is not None else self.cropset(shapes, dec["nodes"], dec["node_shape"])
        batch = crops.batch(range(len(crops)), points_per_crop, rng)
        per_octant = geo_loss(self.decoder, dec["feats"], batch)
        occ_count = np.bincount(dec["node_shape"], minlength=n)
        l_geo = F.tsum(F.mul(per_octant, 1.0 / (n * occ_count[dec["node_shape"]])))

        zero = Tensor(0.0)
        if "alpha_logits" in dec:
            ss = dec["slot_shape"]
            slot_count = np.bincount(ss, minlength=n)
            l_h = F.tsum(F.bce_logits(dec["alpha_logits"], dec["ya"], 1.0 / (n * slot_count[ss])))
            occ = dec["ya"] > 0.5
            k_count = np.bincount(ss[occ], minlength=n)
            wk = np.where(occ, 1.0 / (n * np.maximum(k_count[ss], 1)), 0.0)
            l_k = F.tsum(F.bce_logits(dec["beta_logits"], dec["yb"], wk))
        else:
            l_h = l_k = zero
        l_kl = F.mul(F.kl_diag_gaussian(mu, logvar), 1.0 / (n * cfg.root_dim))
        total = F.add(F.add(F.add(F.mul(l_geo, lam), l_h), l_k), F.mul(l_kl, beta_kl))
        report = LossReport(l_geo.item(), l_h.item(), l_k.item(), l_kl.item(), total.item())
        return total, report

    @staticmethod
    def cropset(shapes, nodes, node_shape) -> CropSet:
        return CropSet([shapes[s].crops[n.address] for n, s in zip(nodes, node_shape)], nodes)

    def trainable(self) -> set[str]:
        names = set(self.store.names("enc.")) | set(self.store.names("dec."))
        if self.cfg.finetune_voxel:
            names |= set(self.store.names("vox."))
        if self.cfg.finetune_decoder:
            names |= set(self.decoder.param_names())
        return names

    def train_epoch(self, dataset: list[ShapeData], rng, lr=None, lam=None, beta_kl=None,
                    lr_scale: float = 1.0) -> LossReport:
        """One pass over the dataset in seeded random order; one Adam step per batch."""
        cfg = self.cfg
        lr = (cfg.lr if lr is None else lr) * lr_scale
        names = self.trainable()
        lrs = {self.decoder.prefix + ".": cfg.decoder_lr * lr_scale} if cfg.decoder_lr > 0 else None
        order = rng.permutation(len(dataset))
        size = cfg.batch_size or len(dataset)
        sums = np.zeros(5)
        for bi, s in enumerate(range(0, len(order), size)):
            batch = [dataset[i] for i in order[s : s + size]]
            self.store.zero_grad()
            try:
                total, rep = self.batch_loss(batch, rng, cfg.points_per_step, lam, beta_kl)
            except NumericFaultError as exc:
                raise NumericFaultError(f"batch {bi}: {exc}") from exc
            total.backward()
            adam_step(self.store, lr, names=names, lrs=lrs)
            sums += len(batch) * np.array([rep.geo, rep.h, rep.k, rep.kl, rep.total])
        sums /= len(dataset)
        return LossReport(*map(float, sums))

    def sample_shape(self, seed: int):
        """Decode a root latent drawn from the standard normal prior."""
        z = np.random.default_rng(seed).standard_normal(self.cfg.root_dim)
        tree, fld = self.field_from_latent(z)
        return z, tree, fld
