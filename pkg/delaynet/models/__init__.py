"""Models for the delaynet toolkit"""

from .base import (
    AblationConfig,
    AggregatorConfig,
    DelayNetConfig,
    EvalConfig,
    FilterBankConfig,
    KernelInit,
    NormalInit,
    PipelineConfig,
    PlantConfig,
    RecoveryConfig,
    RunConfig,
    TrainConfig,
)

from .data import (
    ColumnSpec,
    DisturbanceEvent,
    GroundTruth,
    GroupStats,
    Manifest,
    SampleIndex,
    SampleMeta,
)

from .results import (
    AblationReport,
    AblationRow,
    BoxStats,
    Checkpoint,
    DelayRecoveryResult,
    EpochMetrics,
    EvalReport,
    GradCheckResult,
    HexArray,
    SampleError,
    SubsetReport,
    TrainReport,
)

__all__ = [
    'AblationConfig',
    'AggregatorConfig',
    'DelayNetConfig',
    'EvalConfig',
    'FilterBankConfig',
    'KernelInit',
    'NormalInit',
    'PipelineConfig',
    'PlantConfig',
    'RecoveryConfig',
    'RunConfig',
    'TrainConfig',
    'ColumnSpec',
    'DisturbanceEvent',
    'GroundTruth',
    'GroupStats',
    'Manifest',
    'SampleIndex',
    'SampleMeta',
    'AblationReport',
    'AblationRow',
    'BoxStats',
    'Checkpoint',
    'DelayRecoveryResult',
    'EpochMetrics',
    'EvalReport',
    'GradCheckResult',
    'HexArray',
    'SampleError',
    'SubsetReport',
    'TrainReport',
]
