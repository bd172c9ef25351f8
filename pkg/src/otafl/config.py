"""Experiment configuration and strict JSON loading."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .channel import ChannelConfig
from .data import PartitionSpec
from .model import TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    """``name`` is ``synthetic``, ``mnist`` or ``fmnist``.

    Synthetic data uses ``num_classes``/``num_features``; ``train_per_class``
    defaults to just enough samples for the partition. The IDX datasets need the
    four file paths.
    """

    name: str = "synthetic"
    num_classes: int = 10
    num_features: int = 10
    train_per_class: int | None = None
    test_per_class: int = 100
    seed: int | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def __post_init__(self):
        if self.name not in ("synthetic", "mnist", "fmnist"):
            raise ConfigError(f"unknown dataset {self.name!r}")
        if self.name != "synthetic":
            missing = [
                k for k in ("train_images", "train_labels", "test_images", "test_labels")
                if getattr(self, k) is None
            ]
            if missing:
                raise ConfigError(f"dataset {self.name} needs {missing}")


@dataclass(frozen=True)
class EnergyConfig:
    """Arrival probability (scalar or one per user) and the initial battery level."""

    p_e: float | list = 0.25
    initial_full: bool = False


@dataclass(frozen=True)
class PolicyConfig:
    """``name`` is ``none``, ``entropy`` or ``lse``.

    ``T`` and ``num_clusters`` apply to ``lse``; ``ridge=None`` picks the
    default least-squares ridge; ``max_subset`` caps greedy entropy search.
    """

    name: str = "none"
    T: int = 100
    num_clusters: int = 10
    ridge: float | None = None
    max_subset: int | None = None

    def __post_init__(self):
        if self.name not in ("none", "entropy", "lse"):
            raise ConfigError(f"unknown policy {self.name!r}")
        if self.name == "lse" and (self.T < 1 or self.num_clusters < 1):
            raise ConfigError("lse needs T >= 1 and num_clusters >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    channel_mode: str = "fading"
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    rounds: int = 300
    seed: int = 0
    eval_every: int = 10
    track_epsilon: bool = True

    def __post_init__(self):
        if self.rounds < 0 or self.eval_every < 1:
            raise ConfigError("rounds must be >= 0 and eval_every >= 1")
        if self.channel_mode not in ("fading", "ideal"):
            raise ConfigError(f"unknown channel_mode {self.channel_mode!r}")
        if self.policy.name == "lse" and not self.policy.T < self.rounds:
            raise ConfigError("lse policy requires T < rounds")
        p_e = self.energy.p_e
        if isinstance(p_e, list) and len(p_e) != self.partition.num_users:
            raise ConfigError("per-user p_e must have one entry per user")
        if self.channel_mode == "ideal" and self.partition.num_users > self.channel.K:
            raise ConfigError("ideal channel needs K >= num_users")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, f"{where}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")
