"""Run configuration: nested sections, presets, file/override plumbing.

A run is fully determined by (config, seed).  The single global seed
fans out to per-component generators via ``rng.derive_seed(seed,
label)`` with fixed labels (data collection, training shuffles, actor
episode streams, evaluation episodes), so parallel components never
share a draw sequence.

The ``desk`` preset is sized for single-CPU runs; ``paper`` pins the
published hyperparameters (manager Adam lr 1e-4, batch 200, 100
epochs on a 100k-sequence dataset; worker with 20 actors, learner
batch of 24 unrolls, unroll length 80, RMSProp alpha 0.99 eps 0.01,
50M frames).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusConfig, default_corpus_config
from .manager import ManagerConfig
from .messenger_env import MessengerConfig
from .rtfm_env import RtfmConfig
from .worker import A2CConfig, WorkerConfig

__all__ = ["RunConfig", "TrainConfig", "EvalConfig", "load_config",
           "apply_overrides", "config_to_dict", "CONFIG_ENV_VAR"]

CONFIG_ENV_VAR = "FEUDALGRID_CONFIG"


@dataclass
class TrainConfig:
    dataset_records: int = 20000
    split_ratio: float = 0.8
    split_by_text: bool = False
    manager_stop_exact: float = 0.995
    worker_variant: str = "pair_alive"
    max_frames: int = 5_000_000
    stop_win_rate: float | None = 0.6
    batch_unrolls: int = 20
    checkpoint_every_updates: int = 500


@dataclass
class EvalConfig:
    mode: str = "groundtruth_subgoals"
    worker: str = "bfs_oracle"
    episodes: int = 1000


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    corpus: CorpusConfig = field(default_factory=default_corpus_config)
    rtfm: RtfmConfig = field(default_factory=RtfmConfig)
    messenger: MessengerConfig = field(default_factory=MessengerConfig)
    manager: ManagerConfig = field(default_factory=ManagerConfig)
    worker: WorkerConfig = field(default_factory=WorkerConfig)
    a2c: A2CConfig = field(default_factory=A2CConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _apply_preset(cfg: RunConfig) -> RunConfig:
    if cfg.preset == "desk":
        cfg.worker.d_e = 16
        cfg.worker.channels = 32
        cfg.a2c.unroll = 20
        return cfg
    if cfg.preset == "paper":
        cfg.manager.lr = 1e-4
        cfg.manager.batch_size = 200
        cfg.manager.epochs = 100
        cfg.worker.d_e = 32
        cfg.worker.channels = 64
        cfg.a2c.n_actors = 20
        cfg.a2c.unroll = 80
        cfg.a2c.rmsprop_alpha = 0.99
        cfg.a2c.rmsprop_eps = 0.01
        cfg.train.batch_unrolls = 24
        cfg.train.dataset_records = 100_000
        cfg.train.max_frames = 50_000_000
        cfg.train.stop_win_rate = None
        return cfg
    raise ValueError(f"unknown preset {cfg.preset!r}; use desk or paper")


def _dataclass_from_dict(cls, data: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise KeyError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _SECTION_TYPES and isinstance(value, dict):
            kwargs[key] = _dataclass_from_dict(_SECTION_TYPES[key], value)
        elif isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "corpus": CorpusConfig,
    "rtfm": RtfmConfig,
    "messenger": MessengerConfig,
    "manager": ManagerConfig,
    "worker": WorkerConfig,
    "a2c": A2CConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path=None, preset: str | None = None, seed: int | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional JSON file, and flags.

    The file may specify any subset of sections/keys; unknown keys fail
    with a diagnostic naming the section.  ``$FEUDALGRID_CONFIG`` is
    used when no path is given.
    """
    cfg = RunConfig()
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    data = {}
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as err:
            raise ValueError(
                f"{path}:{err.lineno}:{err.colno}: config parse error: {err.msg}") from None
    if preset is not None:
        data["preset"] = preset
    cfg = _dataclass_from_dict(RunConfig, {**data}) if data else cfg
    cfg = _apply_preset(cfg)
    # file/flag values override preset defaults where explicitly given
    if data:
        cfg = _merge_explicit(cfg, data)
    if seed is not None:
        cfg.seed = seed
    return cfg


def _merge_explicit(cfg: RunConfig, data: dict) -> RunConfig:
    for section, value in data.items():
        if section in ("preset",):
            continue
        if isinstance(value, dict):
            target = getattr(cfg, section)
            for k, v in value.items():
                if isinstance(v, list):
                    v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
                setattr(target, k, v)
        else:
            setattr(cfg, section, value)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings; values parse as JSON first."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        path, raw = item.split("=", 1)
        parts = path.split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = cfg
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise KeyError(f"unknown config section {part!r} in {item!r}")
            target = getattr(target, part)
        if not hasattr(target, parts[-1]):
            raise KeyError(f"unknown config key {parts[-1]!r} in {item!r}")
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        setattr(target, parts[-1], value)
    return cfg
