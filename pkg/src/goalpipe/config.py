"""Run configuration: one JSON document wiring every pipeline stage.

Loading is strict: unknown keys are rejected, and physics constants that the
build fixes at compile time (dt, horizon) are validated against the package
values rather than silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distill import DistillHyper
from .env import DT, HORIZON, SceneEncoder, ViewSpec
from .errors import ConfigInvalid
from .rl.ppo import PPOHyper


@dataclass
class ViewConfig:
    angle_deg: float
    seed: int = 7

    def to_viewspec(self, occlusion_threshold: float) -> ViewSpec:
        return ViewSpec(angle=np.deg2rad(self.angle_deg), feature_seed=self.seed,
                        occlusion_threshold=occlusion_threshold)


def _default_views() -> list[ViewConfig]:
    return [ViewConfig(-45.0), ViewConfig(0.0), ViewConfig(45.0)]


def _default_holdout_views() -> list[ViewConfig]:
    return [ViewConfig(-22.5), ViewConfig(22.5)]


@dataclass
class EnvConfig:
    dt: float = DT
    horizon: int = HORIZON
    osc_amplitude: float = 0.05
    osc_frequency: float = 40.0
    osc_feature_scale: float = 8.0
    feature_scale: float = 0.3
    embedding_dim: int = 64
    occlusion_threshold: float = 0.05
    views: list[ViewConfig] = field(default_factory=_default_views)
    holdout_views: list[ViewConfig] = field(default_factory=_default_holdout_views)

    def validate(self):
        if self.dt != DT:
            raise ConfigInvalid(f"dt is fixed at {DT} in this build")
        if self.horizon != HORIZON:
            raise ConfigInvalid(f"horizon is fixed at {HORIZON} in this build")
        if self.embedding_dim < 1 or not self.views:
            raise ConfigInvalid("need embedding_dim >= 1 and at least one view")


@dataclass
class DatasetConfig:
    total: int = 50_000
    seed_fraction: float = 0.2
    diversity_batch: int = 2048
    diversity_steps: int = 100
    diversity_lr: float = 0.05
    inner_epochs: int = 6


@dataclass
class DistillConfig:
    width: int = 128
    blocks: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 256
    dropout: float = 0.01
    epochs: int = 30
    holdout_fraction: float = 0.1


@dataclass
class FinetuneConfig:
    k: int = 256
    steps: int = 80
    lr: float = 0.02


@dataclass
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.999
    gae_lambda: float = 0.95
    epochs: int = 10
    lr: float = 5e-4
    anneal_lr: bool = True
    grad_norm_clip: float = 0.5
    entropy_coef: float = 2.5e-2
    value_coef: float = 0.5
    weight_decay: float = 0.01
    update_timesteps: int = 8192
    minibatch: int = 2048
    n_envs: int = 32
    gcrl_steps: int = 2_000_000
    mtrl_steps: int = 800_000
    strl_steps: int = 100_000


@dataclass
class PathsConfig:
    artifacts: str = "artifacts"


@dataclass
class RunConfig:
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    # -- component builders --------------------------------------------------
    def encoder(self) -> SceneEncoder:
        return SceneEncoder(
            dim=self.env.embedding_dim,
            feature_scale=self.env.feature_scale,
            osc_amplitude=self.env.osc_amplitude,
            osc_frequency=self.env.osc_frequency,
            osc_feature_scale=self.env.osc_feature_scale,
        )

    def views(self) -> tuple[ViewSpec, ...]:
        return tuple(v.to_viewspec(self.env.occlusion_threshold)
                     for v in self.env.views)

    def holdout_views(self) -> tuple[ViewSpec, ...]:
        return tuple(v.to_viewspec(self.env.occlusion_threshold)
                     for v in self.env.holdout_views)

    def distill_hyper(self, seed: int | None = None,
                      epochs: int | None = None) -> DistillHyper:
        d = self.distill
        return DistillHyper(
            width=d.width, blocks=d.blocks, lr=d.lr,
            weight_decay=d.weight_decay, batch_size=d.batch_size,
            dropout=d.dropout, epochs=d.epochs if epochs is None else epochs,
            holdout_fraction=d.holdout_fraction,
            seed=self.seed if seed is None else seed,
        )

    def ppo_hyper(self, kind: str) -> PPOHyper:
        p = self.ppo
        total = {"GCRL": p.gcrl_steps, "MTRL": p.mtrl_steps,
                 "STRL": p.strl_steps}[kind]
        return PPOHyper(
            clip=p.clip, gamma=p.gamma, gae_lambda=p.gae_lambda,
            epochs=p.epochs, lr=p.lr, anneal_lr=p.anneal_lr,
            grad_norm_clip=p.grad_norm_clip, entropy_coef=p.entropy_coef,
            value_coef=p.value_coef, weight_decay=p.weight_decay,
            update_timesteps=p.update_timesteps, minibatch=p.minibatch,
            n_envs=p.n_envs, total_steps=total,
        )

    def artifact(self, name: str) -> Path:
        return Path(self.paths.artifacts) / name


_PRIMITIVES = (int, float, str, bool)


def _from_dict(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where}: expected an object")
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(field_map)
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = field_map[name]
        kwargs[name] = _coerce(f.type, value, f"{where}.{name}")
    return cls(**kwargs)


def _coerce(annotation, value, where: str):
    if annotation in ("int",):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(f"{where}: expected integer, got {value!r}")
        return value
    if annotation in ("float",):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{where}: expected number, got {value!r}")
        return float(value)
    if annotation in ("bool",):
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{where}: expected boolean, got {value!r}")
        return value
    if annotation in ("str",):
        if not isinstance(value, str):
            raise ConfigInvalid(f"{where}: expected string, got {value!r}")
        return value
    if annotation == "list[ViewConfig]":
        if not isinstance(value, list):
            raise ConfigInvalid(f"{where}: expected a list of views")
        return [_from_dict(ViewConfig, v, f"{where}[{i}]")
                for i, v in enumerate(value)]
    nested = {
        "EnvConfig": EnvConfig, "DatasetConfig": DatasetConfig,
        "DistillConfig": DistillConfig, "FinetuneConfig": FinetuneConfig,
        "PPOConfig": PPOConfig, "PathsConfig": PathsConfig,
    }.get(annotation if isinstance(annotation, str) else annotation.__name__)
    if nested is not None:
        return _from_dict(nested, value, where)
    raise ConfigInvalid(f"{where}: unsupported config field type {annotation!r}")


def load_runconfig(path_or_none: str | None) -> RunConfig:
    """Parse and validate a RunConfig JSON file; defaults when path is None."""
    if path_or_none is None:
        cfg = RunConfig()
    else:
        try:
            with open(path_or_none) as f:
                data = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigInvalid(f"config is not valid JSON: {err}") from err
        cfg = _from_dict(RunConfig, data, "config")
    cfg.env.validate()
    return cfg


def runconfig_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
