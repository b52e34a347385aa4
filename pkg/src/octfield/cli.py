"""Command-line interface.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 numeric fault, 4 domain error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import container
from .config import Config, load_config
from .dataset import SampleCache, prepare_shape
from .errors import MeshIOError, NumericFaultError, OctFieldError, UsageError
from .extraction import marching_cubes
from .field_oracle import MeshOracle
from .hier_vae import HierVAE, interpolate
from .mesh_io import TriMesh, load_mesh, normalize_unit_sphere, sample_surface, save_obj
from .metrics import compare
from .nn import ParamStore
from .octree import build_octree, cell_count_table
from . import report
from .training import fit_decoder, train_vae

log = logging.getLogger("octfield")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@contextlib.contextmanager
def stage(name: str):
    """Prefix numeric faults with the pipeline stage that raised them."""
    try:
        yield
    except NumericFaultError as exc:
        raise NumericFaultError(f"{name}: {exc}") from exc
    except FloatingPointError as exc:
        raise NumericFaultError(f"{name}: {exc}") from exc


# -- shared helpers -------------------------------------------------------------


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    if args.threads is not None:
        out["threads"] = args.threads
    return out


def _config(args, base: dict | None = None) -> Config:
    """Checkpoint config (if any) < --config file < --set / --seed / --threads."""
    d = dict(base or {})
    if args.config:
        d.update(load_config(args.config).to_dict())
    d.update(_overrides(args))
    return Config.from_dict(d)


def _header(cfg: Config, **info) -> str:
    return json.dumps({"config": cfg.to_dict(), **info}, sort_keys=True)


def _save_checkpoint(path, store: ParamStore, cfg: Config, kind: str, trees=()) -> None:
    chunks = [("CONF", container.encode_conf({"kind": kind, "config": cfg.to_dict()})),
              ("PARM", container.encode_params(store.arrays()))]
    chunks += [("TREE", container.encode_tree(t)) for t in trees]
    container.write_container(path, chunks)


def load_checkpoint(path):
    """Returns (conf dict, ParamStore, trees)."""
    chunks = container.read_container(path)
    if "CONF" not in chunks or "PARM" not in chunks:
        raise MeshIOError(f"{path}: checkpoint lacks CONF or PARM chunk")
    conf = container.decode_conf(chunks["CONF"][0])
    store = ParamStore()
    for name, arr in container.decode_params(chunks["PARM"][0]).items():
        store.add(name, arr)
    trees = [container.decode_tree(c) for c in chunks.get("TREE", [])]
    return conf, store, trees


def _model_from(path, args) -> HierVAE:
    conf, store, _ = load_checkpoint(path)
    cfg = _config(args, conf["config"])
    return HierVAE(cfg, store)


def _dataset(paths, cfg: Config, cache_path=None):
    cache = SampleCache(cache_path) if cache_path else None
    data = []
    for i, p in enumerate(paths):
        with stage(f"prepare {p}"):
            data.append(prepare_shape(load_mesh(p), cfg, cfg.seed + i, name=Path(p).stem, cache=cache))
    if cache is not None:
        cache.save()
    return data


def _stem(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _mesh_field(mesh: TriMesh):
    oracle = MeshOracle(mesh)
    return lambda p: oracle.inside(p).astype(np.float64)


def _extract(model: HierVAE, tree, fld):
    with stage("extraction"):
        if tree.root.alpha == 0:
            log.warning("decoded an empty shape")
            return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return marching_cubes(fld, model.cfg.mc_resolution)


# -- commands ---------------------------------------------------------------------


def cmd_build_tree(args) -> int:
    cfg = _config(args)
    mesh = normalize_unit_sphere(load_mesh(args.mesh))
    tree = build_octree(mesh, sample_surface(mesh, cfg.criterion_samples, cfg.seed), cfg.max_depth, cfg.tau)
    out = Path(args.out or Path(args.mesh).with_suffix(".octf").name)
    container.write_container(out, [("CONF", container.encode_conf({"kind": "tree", "config": cfg.to_dict()})),
                                    ("TREE", container.encode_tree(tree))])
    table = cell_count_table(tree)
    _write_cells(table, out, Path(args.mesh).stem)
    print(f"{'level':>5} {'adaptive':>9} {'regular':>9}")
    for lv, a, r in table:
        print(f"{lv:>5} {a:>9} {r:>9}")
    return 0


def _write_cells(table, out: Path, name: str):
    rows = [{"level": lv, "adaptive": a, "regular": r} for lv, a, r in table]
    report.write_csv(_stem(out, "_cells.csv"), rows, report.CELL_COLUMNS)
    report.plot_cell_counts(table, _stem(out, "_cells.png"), title=f"{name}: occupied cells per level")


def cmd_compare_grid(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "cells.csv")
    rows = []
    for path in args.meshes:
        mesh = normalize_unit_sphere(load_mesh(path))
        tree = build_octree(mesh, sample_surface(mesh, cfg.criterion_samples, cfg.seed), cfg.max_depth, cfg.tau)
        table = cell_count_table(tree)
        rows += [{"mesh": Path(path).stem, "level": lv, "adaptive": a, "regular": r} for lv, a, r in table]
        report.plot_cell_counts(table, out.with_name(f"{out.stem}_{Path(path).stem}.png"),
                                title=f"{Path(path).stem}: occupied cells per level")
    report.write_csv(out, rows, ("mesh",) + report.CELL_COLUMNS)
    print(f"{'mesh':<20} {'level':>5} {'adaptive':>9} {'regular':>9}")
    for r in rows:
        print(f"{r['mesh']:<20} {r['level']:>5} {r['adaptive']:>9} {r['regular']:>9}")
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    data = _dataset(args.meshes, cfg, args.cache)
    model = HierVAE(cfg)
    with stage("pretraining"):
        res = fit_decoder(model, data, args.epochs)
    out = Path(args.out or "fit.octf")
    _save_checkpoint(out, model.store, cfg, "fit")
    rows = [{"epoch": i, "L_geo": v, "total": v} for i, v in enumerate(res.losses)]
    report.write_csv(_stem(out, "_loss.csv"), rows, ("epoch", "L_geo", "total"))
    report.plot_losses([{**r, "L_h": 0, "L_k": 0, "L_KL": 0} for r in rows], _stem(out, "_loss.png"), "decoder pretraining")
    print(f"final pretraining loss {res.final_loss:.6f}")
    return 0


def cmd_train(args) -> int:
    conf, store, _ = load_checkpoint(args.init)
    if conf.get("kind") not in ("fit", "vae"):
        raise UsageError(f"{args.init} is not a fit or train checkpoint")
    cfg = _config(args, conf["config"])
    data = _dataset(args.meshes, cfg, args.cache)
    model = HierVAE(cfg, store)
    with stage("training"):
        hist = train_vae(model, data, args.epochs)
    out = Path(args.out or "model.octf")
    _save_checkpoint(out, model.store, cfg, "vae")
    rows = list(hist.rows())
    report.write_csv(_stem(out, "_loss.csv"), rows, report.LOSS_COLUMNS)
    report.plot_losses(rows, _stem(out, "_loss.png"))
    last = hist.reports[-1]
    print(" ".join(f"{k}={v:.6f}" for k, v in last.as_dict().items()))
    return 0


def cmd_reconstruct(args) -> int:
    model = _model_from(args.model, args)
    cfg = model.cfg
    shape = _dataset([args.mesh], cfg)[0]
    with stage("reconstruction"):
        post, tree, fld = model.reconstruct(shape)
    mesh = _extract(model, tree, fld)
    out = Path(args.out or Path(args.mesh).stem + "_recon.obj")
    save_obj(mesh, out, _header(cfg, source=str(args.mesh)))
    container.write_container(_stem(out, "_tree.octf"), [("TREE", container.encode_tree(tree))])
    if len(mesh.faces):
        with stage("metrics"):
            rep = compare(mesh, shape.mesh, fld, _mesh_field(shape.mesh), cfg.cd_samples, cfg.emd_samples,
                          cfg.iou_resolution, cfg.fscore_ratio, cfg.seed)
        text = rep.to_json()
        _stem(out, "_metrics.json").write_text(text + "\n")
        print(text)
    return 0


def cmd_sample(args) -> int:
    model = _model_from(args.model, args)
    outdir = Path(args.out or "samples")
    outdir.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        seed = model.cfg.seed + k
        with stage(f"sample {k}"):
            z, tree, fld = model.sample_shape(seed)
        mesh = _extract(model, tree, fld)
        save_obj(mesh, outdir / f"sample_{k:03d}.obj", _header(model.cfg, sample_seed=seed))
        print(f"sample_{k:03d}.obj faces={len(mesh.faces)}")
    return 0


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    model = _model_from(args.model, args)
    data = _dataset([args.mesh_a, args.mesh_b], model.cfg)
    a = model.encode_shape(data[0]).mu
    b = model.encode_shape(data[1]).mu
    outdir = Path(args.out or "interp")
    outdir.mkdir(parents=True, exist_ok=True)
    for i in range(args.steps):
        t = i / (args.steps - 1)
        with stage(f"interpolation step {i}"):
            tree, fld = model.field_from_latent(interpolate(a, b, t))
        mesh = _extract(model, tree, fld)
        save_obj(mesh, outdir / f"interp_{i:02d}.obj", _header(model.cfg, t=t))
        print(f"interp_{i:02d}.obj t={t:.3f} faces={len(mesh.faces)}")
    return 0


def cmd_metrics(args) -> int:
    cfg = _config(args)
    a, b = load_mesh(args.mesh_a), load_mesh(args.mesh_b)
    with stage("metrics"):
        rep = compare(a, b, _mesh_field(a), _mesh_field(b), cfg.cd_samples, cfg.emd_samples,
                      cfg.iou_resolution, cfg.fscore_ratio, cfg.seed)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value or JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="cap BLAS threads; 1 gives bit-identical runs")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")

    p = _Parser(prog="octfield", description="Adaptive-octree local implicit shape modelling.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-tree", parents=[common], help="build the adaptive octree of a mesh")
    s.add_argument("mesh")
    s.set_defaults(func=cmd_build_tree)

    s = sub.add_parser("compare-grid", parents=[common], help="adaptive vs regular cell counts")
    s.add_argument("meshes", nargs="+")
    s.set_defaults(func=cmd_compare_grid)

    s = sub.add_parser("fit", parents=[common], help="pretrain the local implicit decoder")
    s.add_argument("meshes", nargs="+")
    s.add_argument("--epochs", type=int)
    s.add_argument("--cache", help="sample cache container (created if missing)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("train", parents=[common], help="train the hierarchical VAE")
    s.add_argument("meshes", nargs="+")
    s.add_argument("--init", required=True, help="checkpoint written by fit")
    s.add_argument("--epochs", type=int)
    s.add_argument("--cache")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", parents=[common], help="encode, decode and mesh one shape")
    s.add_argument("model")
    s.add_argument("mesh")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("sample", parents=[common], help="decode shapes from prior samples")
    s.add_argument("model")
    s.add_argument("--count", type=int, default=1)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("interpolate", parents=[common], help="mesh a linear path between two shapes")
    s.add_argument("model")
    s.add_argument("mesh_a")
    s.add_argument("mesh_b")
    s.add_argument("--steps", type=int, default=11)
    s.set_defaults(func=cmd_interpolate)

    s = sub.add_parser("metrics", parents=[common], help="CD, EMD, IoU and F1 between two meshes")
    s.add_argument("mesh_a")
    s.add_argument("mesh_b")
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    level = os.environ.get("OCTF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        threads = args.threads
        if threads is not None and threads < 1:
            raise UsageError("--threads must be >= 1")
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                return args.func(args)
        return args.func(args)
    except OctFieldError as exc:
        print(f"octfield: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"octfield: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
