"""Ego-motion-aware 2D hand forecasting on synthetic egocentric sequences."""

from .data import (
    DatasetStats,
    ScenarioConfig,
    SequenceSample,
    generate_dataset,
    kitchen_config,
    load_dataset,
    outdoor_config,
    save_dataset,
)
from .estimators import (
    ConstantVelocityForecaster,
    EmagForecaster,
    KalmanForecaster,
    NotFittedError,
    Seq2SeqForecaster,
)
from .model import (
    EmagNet,
    ModelConfig,
    Seq2SeqConfig,
    Seq2SeqNet,
    load_checkpoint,
    prepare_batch,
    save_checkpoint,
)
from .training import TrainConfig, evaluate, fit, run_matrix

__version__ = "0.1.0"

__all__ = [
    "ConstantVelocityForecaster",
    "DatasetStats",
    "EmagForecaster",
    "EmagNet",
    "KalmanForecaster",
    "ModelConfig",
    "NotFittedError",
    "ScenarioConfig",
    "Seq2SeqConfig",
    "Seq2SeqForecaster",
    "Seq2SeqNet",
    "SequenceSample",
    "TrainConfig",
    "evaluate",
    "fit",
    "generate_dataset",
    "kitchen_config",
    "load_dataset",
    "load_checkpoint",
    "outdoor_config",
    "prepare_batch",
    "run_matrix",
    "save_checkpoint",
    "save_dataset",
    "__version__",
]
