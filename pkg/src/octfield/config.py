"""Run configuration: defaults, file parsing (key=value or JSON) and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import UsageError


@dataclass
class Config:
    # octree
    tau: float = 0.1
    max_depth: int = 4
    criterion_samples: int = 4096
    # sampling
    samples_per_octant: int = 10000
    shell_fractions: tuple = (0.4, 0.3, 0.2, 0.1)
    shell_bounds: tuple = (0.02, 0.05, 0.15, float("inf"))
    # networks
    voxel_res: int = 32
    encoder_channels: tuple = (16, 32, 64, 128, 128)
    feature_dim: int = 64
    root_dim: int = 128
    hidden_dim: int = 256
    decoder_hidden: int = 256
    decoder_layers: int = 4
    # optimization
    lr: float = 1e-3
    code_lr: float = 1e-2
    decoder_lr: float = 0.0  # fine-tuning rate of the implicit decoder; 0 means lr
    pretrain_epochs: int = 200
    epochs: int = 200
    geo_ramp: int = 0  # VAE epochs over which the geometry weight rises geometrically to lambda_geo
    geo_ramp_start: float = 1e-3  # geometry weight at epoch 0 as a fraction of lambda_geo
    lr_decay: float = 1.0  # final learning-rate factor, reached by cosine decay after the geometry ramp
    points_per_step: int = 512
    batch_size: int = 0
    lambda_geo: float = 10.0
    beta_kl: float = 0.01
    finetune_decoder: bool = True
    finetune_voxel: bool = True
    seed: int = 0
    # inference and evaluation
    alpha_threshold: float = 0.5
    beta_threshold: float = 0.5
    mc_resolution: int = 64
    iou_resolution: int = 64
    cd_samples: int = 10000
    emd_samples: int = 1024
    fscore_ratio: float = 0.01
    threads: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self) -> "Config":
        if self.tau < 0:
            raise UsageError("tau must be >= 0")
        if self.max_depth < 1:
            raise UsageError("max_depth must be >= 1")
        for name in ("criterion_samples", "samples_per_octant", "voxel_res", "feature_dim", "root_dim",
                     "hidden_dim", "decoder_hidden", "decoder_layers", "points_per_step", "mc_resolution",
                     "iou_resolution", "cd_samples", "emd_samples", "threads"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")
        if self.geo_ramp < 0:
            raise UsageError("geo_ramp must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise UsageError("lr_decay must be in (0, 1]")
        if not 0.0 < self.geo_ramp_start <= 1.0:
            raise UsageError("geo_ramp_start must be in (0, 1]")
        if self.voxel_res & (self.voxel_res - 1):
            raise UsageError("voxel_res must be a power of two")
        if len(self.encoder_channels) != self.voxel_res.bit_length() - 1:
            raise UsageError(
                f"encoder_channels needs one entry per stride-2 block ({self.voxel_res.bit_length() - 1} for voxel_res {self.voxel_res})"
            )
        if len(self.shell_fractions) != len(self.shell_bounds):
            raise UsageError("shell_fractions and shell_bounds differ in length")
        if abs(sum(self.shell_fractions) - 1.0) > 1e-9:
            raise UsageError("shell_fractions must sum to 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shell_bounds"] = [("inf" if b == float("inf") else b) for b in self.shell_bounds]
        d["shell_fractions"] = list(self.shell_fractions)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name: f for f in fields(cls)}
        kwargs, extra = {}, {}
        for key, value in d.items():
            if key not in known:
                extra[key] = value
                continue
            kwargs[key] = _coerce(known[key].default, key, value)
        cfg = cls(**kwargs)
        cfg.extra.update(extra)
        return cfg.validate()

    def replace(self, **changes) -> "Config":
        d = self.to_dict()
        d.update(changes)
        return Config.from_dict(d)


def _coerce(default, key, value):
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = [v for v in value.replace("(", "").replace(")", "").split(",") if v.strip()]
            return tuple(float(v) if key.startswith("shell") else int(v) for v in value)
        if isinstance(default, dict):
            return dict(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def parse_config_text(text: str) -> dict:
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad JSON config: {exc}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict | None = None) -> Config:
    d = {}
    if path is not None:
        try:
            d = parse_config_text(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
    d.update(overrides or {})
    return Config.from_dict(d)
