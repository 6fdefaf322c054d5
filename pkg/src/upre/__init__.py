"""Prompt/representation-enhancement training framework on synthetic detection worlds."""

from .config import CliConfig, TrainConfig
from .pipeline import run_full, stage1_train, stage2_finetune, zero_shot_eval
from .world import WorldConfig, generate_world

__version__ = "0.1.0"

__all__ = [
    "CliConfig",
    "TrainConfig",
    "WorldConfig",
    "generate_world",
    "run_full",
    "stage1_train",
    "stage2_finetune",
    "zero_shot_eval",
    "__version__",
]
