"""End-to-end pipelines shared by the CLI and the acceptance run."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .dataset import ShapeData
from .hier_vae import HierVAE, LossReport
from .local_implicit import CropSet, PretrainResult, pretrain_decoder
from .nn import ParamStore

log = logging.getLogger(__name__)


def all_crops(dataset: list[ShapeData]) -> CropSet:
    crops, octants = [], []
    for s in dataset:
        for n in s.occupied:
            crops.append(s.crops[n.address])
            octants.append(n)
    return CropSet(crops, octants)


def fit_decoder(model: HierVAE, dataset: list[ShapeData], epochs: int | None = None, seed: int | None = None) -> PretrainResult:
    """Pretrain the shared implicit decoder on every occupied octant of every shape."""
    cfg = model.cfg
    res = pretrain_decoder(
        model.decoder,
        all_crops(dataset),
        cfg.pretrain_epochs if epochs is None else epochs,
        cfg.seed if seed is None else seed,
        lr=cfg.lr,
        code_lr=cfg.code_lr,
        points_per_crop=cfg.points_per_step,
    )
    # the free codes only serve pretraining; keep checkpoints lean
    name = f"{model.decoder.prefix}_codes"
    for table in (model.store.params, model.store.m, model.store.v, model.store.t):
        table.pop(name, None)
    return res


def geo_weight(cfg: Config, epoch: int) -> float:
    if epoch >= cfg.geo_ramp:
        return cfg.lambda_geo
    return cfg.lambda_geo * cfg.geo_ramp_start ** (1.0 - epoch / cfg.geo_ramp)


def lr_factor(cfg: Config, epoch: int, epochs: int) -> float:
    """1 through the geometry ramp, then cosine down to ``cfg.lr_decay`` at the last epoch."""
    span = epochs - 1 - cfg.geo_ramp
    if cfg.lr_decay == 1.0 or epoch <= cfg.geo_ramp or span <= 0:
        return 1.0
    t = min(1.0, (epoch - cfg.geo_ramp) / span)
    return cfg.lr_decay + (1.0 - cfg.lr_decay) * 0.5 * (1.0 + np.cos(np.pi * t))


@dataclass
class TrainHistory:
    reports: list[LossReport] = field(default_factory=list)

    def rows(self):
        for i, r in enumerate(self.reports):
            yield {"epoch": i, **r.as_dict()}


def train_vae(model: HierVAE, dataset: list[ShapeData], epochs: int | None = None, seed: int | None = None,
              callback=None) -> TrainHistory:
    """Run ``epochs`` passes of teacher-forced VAE training; ``callback(epoch, report)`` after each.

    With ``cfg.geo_ramp`` > 0 the geometry weight grows geometrically from
    ``geo_ramp_start * lambda_geo`` to ``lambda_geo`` over that many epochs, so the structure
    heads settle before the much larger reconstruction gradient dominates the shared features.
    After the ramp the learning rates follow ``lr_factor``.
    """
    cfg = model.cfg
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 1])
    hist = TrainHistory()
    epochs = cfg.epochs if epochs is None else epochs
    for epoch in range(epochs):
        rep = model.train_epoch(dataset, rng, lam=geo_weight(cfg, epoch), lr_scale=lr_factor(cfg, epoch, epochs))
        hist.reports.append(rep)
        log.info("epoch %d total %.6f geo %.6f h %.6f k %.6f kl %.6f", epoch, rep.total, rep.geo, rep.h, rep.k, rep.kl)
        if callback is not None:
            callback(epoch, rep)
    return hist


def new_model(cfg: Config, store: ParamStore | None = None) -> HierVAE:
    return HierVAE(cfg, store)
