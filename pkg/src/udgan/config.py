"""Run and training configuration.

Every field has a default. Defaults are the full-scale training setup
(384x128 inputs, 512-d codes, three stages with 100/200/400 epochs).
:func:`toy_config` gives a CPU-sized variant used by the test-suite.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Tuple

import yaml

from .errors import ConfigError

RECON_MODES = ("content_source", "identity_source")


@dataclass
class LossWeights:
    rec: float = 10.0
    kl: float = 1e-4
    adv: float = 1.0
    label_smoothing: float = 0.1

    def validate(self):
        for name in ("rec", "kl", "adv"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")


@dataclass
class ModelConfig:
    backbone: str = "tiny"
    latent_dim: int = 512
    trunk_channels: Tuple[int, int, int] = (32, 64, 128)
    gen_blocks: int = 6
    gen_base_channels: int = 512
    gen_dropout: float = 0.5
    disc_blocks: int = 7
    disc_base_channels: int = 64
    leaky_slope: float = 0.2


@dataclass
class Stage1Config:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1.5e-4
    warmup_epochs: int = 20
    weight_decay: float = 5e-4


@dataclass
class Stage2Config:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    disc_momentum: float = 0.9


@dataclass
class Stage3Config:
    epochs: int = 400
    source_batch_size: int = 32
    target_batch_size: int = 16
    lr: float = 2e-5


@dataclass
class TrainConfig:
    image_size: Tuple[int, int] = (384, 128)
    norm_mean: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    norm_std: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    stage3: Stage3Config = field(default_factory=Stage3Config)
    recon_target: str = "content_source"
    miner_k: int = 5
    seed: int = 0
    checkpoint_every: int = 1

    def validate(self):
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        self.weights.validate()
        if self.recon_target not in RECON_MODES:
            raise ConfigError(f"recon_target must be one of {RECON_MODES}, got {self.recon_target!r}")
        if self.miner_k < 1:
            raise ConfigError("miner_k must be >= 1")
        if self.stage2.batch_size % 2 or self.stage3.target_batch_size % 2:
            raise ConfigError("target-domain batch sizes must be even (whole pairs)")
        for name in ("stage1", "stage2", "stage3"):
            stage = getattr(self, name)
            if stage.epochs < 1:
                raise ConfigError(f"{name}.epochs must be >= 1")
            if stage.lr <= 0:
                raise ConfigError(f"{name}.lr must be > 0")
        if not 0 <= self.stage1.warmup_epochs <= self.stage1.epochs:
            raise ConfigError("stage1.warmup_epochs must lie in [0, stage1.epochs]")
        if not 0.0 <= self.model.gen_dropout < 1.0:
            raise ConfigError("model.gen_dropout must be in [0, 1)")
        gen = 2 ** self.model.gen_blocks
        if h % gen or w % gen:
            raise ConfigError(
                f"image size {h}x{w} is not divisible by 2**gen_blocks={gen}; "
                f"pick a size that is a multiple of {gen} or change model.gen_blocks")
        return self


@dataclass
class DataConfig:
    source_root: Optional[str] = None
    target_root: Optional[str] = None
    eval_root: Optional[str] = None
    pattern: str = r"([-\d]+)_c(\d+)"
    train_dir: str = "train"
    query_dir: str = "query"
    gallery_dir: str = "gallery"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str = "runs/udgan"

    def validate(self):
        self.train.validate()
        return self


def toy_config(seed: int = 0) -> TrainConfig:
    """48x16 images, 4 generator blocks, small widths: trains on a laptop CPU in minutes."""
    cfg = TrainConfig(
        image_size=(48, 16),
        model=ModelConfig(latent_dim=64, trunk_channels=(16, 32, 64), gen_blocks=4,
                          gen_base_channels=128, gen_dropout=0.1,
                          disc_blocks=3, disc_base_channels=32),
        stage1=Stage1Config(epochs=70, batch_size=32, lr=3e-3, warmup_epochs=3),
        stage2=Stage2Config(epochs=30, batch_size=16, lr=1e-3),
        stage3=Stage3Config(epochs=6, source_batch_size=32, target_batch_size=16, lr=2e-4),
        seed=seed,
    )
    return cfg.validate()


# -- (de)serialisation -------------------------------------------------------

def to_dict(cfg) -> dict:
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v
    return conv(dataclasses.asdict(cfg))


def from_dict(cls, data: Optional[dict], where: str = ""):
    """Build dataclass ``cls`` from a nested mapping, rejecting unknown keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or cls.__name__}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError("unknown config key(s): " + ", ".join(prefix + k for k in unknown))
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = from_dict(type(default), value, path)
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                raise ConfigError(f"{path}: expected a list of {len(default)} values")
            kwargs[name] = tuple(type(d)(v) for d, v in zip(default, value))
        elif isinstance(default, bool) or default is None or isinstance(default, str):
            kwargs[name] = value
        elif isinstance(default, (int, float)):
            try:
                cast = type(default)(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{path}: expected a number, got {value!r}") from None
            if isinstance(default, int) and cast != value:
                raise ConfigError(f"{path}: expected an integer, got {value!r}")
            kwargs[name] = cast
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_run_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return from_dict(RunConfig, data).validate()


def dump_config(cfg, path=None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def train_config_from_dict(data: Any) -> TrainConfig:
    return from_dict(TrainConfig, data).validate()
