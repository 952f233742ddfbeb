"""Run configuration: JSON-serializable description of one training run."""

import json
from dataclasses import asdict, dataclass, field

from .exceptions import ConfigError
from .losses import LossConfig
from .model import ModelConfig

PRESETS = ("desk", "paper")


@dataclass
class RunConfig:
    preset: str = "desk"
    resolution: tuple = None        # (width, height); preset default when None
    patch_size: int = None
    ablate_transformer: bool = False
    ablate_cnn: bool = False
    ablate_mugen: bool = False
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    checkpoint: str = "checkpoint.mugn"
    data_dir: str = None
    synth_samples: int = 200

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}, expected one of {PRESETS}")
        if self.ablate_transformer and self.ablate_cnn:
            raise ConfigError("cannot disable both branches")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        try:
            self.loss.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return self

    def model_config(self):
        base = ModelConfig.desk() if self.preset == "desk" else ModelConfig.paper()
        if self.resolution is not None:
            base.image_size = tuple(self.resolution)
        if self.patch_size is not None:
            base.patch.patch_size = self.patch_size
        base.transformer_branch = not self.ablate_transformer
        base.cnn_branch = not self.ablate_cnn
        base.mugen_attention = not self.ablate_mugen
        try:
            base.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return base

    def to_dict(self):
        d = asdict(self)
        if self.resolution is not None:
            d["resolution"] = list(self.resolution)
        return d

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @staticmethod
    def from_dict(d):
        d = dict(d)
        loss = d.pop("loss", None)
        cfg = RunConfig(**d)
        if loss is not None:
            cfg.loss = LossConfig(**loss)
        if cfg.resolution is not None:
            cfg.resolution = tuple(cfg.resolution)
        # desk runs default to the small boundary-weight window
        if loss is None or "weight_kernel" not in loss:
            cfg.loss.weight_kernel = 7 if cfg.preset == "desk" else 31
        return cfg.validate()

    @staticmethod
    def load(path):
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read run config {path}: {e}") from e
        try:
            return RunConfig.from_dict(raw)
        except TypeError as e:
            raise ConfigError(f"bad run config {path}: {e}") from e
