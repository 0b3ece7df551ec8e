"""
delaynet - Delay-filter networks for system identification of delayed plants
"""
from .checkpoint import CheckpointStore, restore
from .errors import ConfigurationError, DataError, DelayNetError, NumericError, StateError
from .experiment_manager import ExperimentManager
from .model import DelayNet, ZeroPredictor, build
from .models import (
    DelayNetConfig,
    PipelineConfig,
    PlantConfig,
    RunConfig,
    TrainConfig,
)
from .const import FilterFamily, FilterMode, TemporalKind

__version__ = "0.1.0"

__all__ = [
    'CheckpointStore',
    'ConfigurationError',
    'DataError',
    'DelayNet',
    'DelayNetConfig',
    'DelayNetError',
    'ExperimentManager',
    'FilterFamily',
    'FilterMode',
    'NumericError',
    'PipelineConfig',
    'PlantConfig',
    'RunConfig',
    'StateError',
    'TemporalKind',
    'TrainConfig',
    'ZeroPredictor',
    'build',
    'restore',
]
