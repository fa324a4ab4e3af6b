"""Flat ``key = value`` experiment configuration.

Precedence is command-line flag > config file > dataclass default.
"""
from __future__ import annotations

import dataclasses
import os
import zlib
from dataclasses import dataclass, fields

import numpy as np

from .backbone import TrainConfig
from .dataset import ConfigError
from .harness import CANDIDATE_POLICIES, EvalConfig


@dataclass
class ExperimentConfig:
    out: str | None = None
    data: str | None = None
    synthetic: bool = False
    n: int = 200
    m: int = 200
    synthetic_dim: int = 8
    density: float = 0.2
    sharpness: float = 12.0
    k_core: int = 5
    split_ratios: str = "0.8,0.1,0.1"
    seed: int = 0
    # backbone
    dim: int = 128
    lr: float = 0.001
    batch_size: int = 1024
    max_epochs: int = 300
    patience: int = 30
    l2_weight: float = 1e-6
    eval_k: int = 50
    # counterfactual finetuning
    ft_lr: float = 0.001
    ft_batch_size: int = 1024
    ft_max_epochs: int = 100
    ft_patience: int = 30
    # evaluation
    k: int = 50
    candidate_policy: str = "exclude-train-val-positives"
    ybar_sample_size: int = 100
    ybar_top_q: int = 1

    def ratios(self) -> tuple[float, float, float]:
        try:
            r = tuple(float(x) for x in self.split_ratios.split(","))
        except ValueError:
            raise ConfigError(f"bad split_ratios {self.split_ratios!r}") from None
        if len(r) != 3 or min(r) <= 0 or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must be three positive fractions summing to 1, got {r}")
        return r

    def validate(self) -> "ExperimentConfig":
        self.ratios()
        for name in ("k_core", "dim", "batch_size", "max_epochs", "patience", "eval_k",
                     "ft_batch_size", "ft_patience", "k", "ybar_sample_size", "ybar_top_q"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.ft_max_epochs < 0:
            raise ConfigError("ft_max_epochs must be >= 0")
        if self.lr <= 0 or self.ft_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.candidate_policy not in CANDIDATE_POLICIES:
            raise ConfigError(f"candidate_policy must be one of {CANDIDATE_POLICIES}")
        if self.data is not None and not os.path.exists(self.data):
            raise ConfigError(f"data file {self.data} does not exist")
        return self

    def seed_for(self, component: str) -> int:
        return derive_seed(self.seed, component)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.seed_for("pretrain"), l2_weight=self.l2_weight,
                           eval_k=self.eval_k)

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.ft_lr, batch_size=self.ft_batch_size,
                           max_epochs=self.ft_max_epochs, patience=self.ft_patience,
                           seed=self.seed_for("finetune"), l2_weight=self.l2_weight,
                           eval_k=self.eval_k)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(k=self.k, candidate_policy=self.candidate_policy,
                          ybar_sample_size=self.ybar_sample_size, ybar_top_q=self.ybar_top_q,
                          seed=self.seed_for("ybar"))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def derive_seed(root: int, component: str) -> int:
    """Stable per-component seed expanded from the root seed."""
    ss = np.random.SeedSequence(entropy=root, spawn_key=(zlib.crc32(component.encode()),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def coerce(name: str, raw) -> object:
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = _FIELDS[name].default
    if isinstance(raw, str):
        text = raw.strip()
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        try:
            if isinstance(default, int):
                return int(text)
            if isinstance(default, float):
                return float(text)
        except ValueError:
            raise ConfigError(f"{name}: cannot parse {raw!r}") from None
        return None if text.lower() in ("", "none") else text
    return raw


def read_config_file(path: str | os.PathLike) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = coerce(key.replace("-", "_"), value)
    return values


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file {path} does not exist")
        values.update(read_config_file(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    return ExperimentConfig(**values)
