"""Over-the-air federated learning with energy-harvesting users and data-aware scheduling."""

from .channel import ChannelConfig, ChannelRealization
from .config import ExperimentConfig, load_config
from .data import PartitionSpec
from .model import LocalDataset, TrainingConfig
from .simulation import evaluate, prepare_data, run_experiment

__all__ = [
    "ChannelConfig",
    "ChannelRealization",
    "ExperimentConfig",
    "LocalDataset",
    "PartitionSpec",
    "TrainingConfig",
    "evaluate",
    "load_config",
    "prepare_data",
    "run_experiment",
]

__version__ = "0.1.0"
