"""
Pydantic models for training, evaluation and checkpoint output
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..const import CHECKPOINT_FORMAT_VERSION, NormKind
from .base import DelayNetConfig, PipelineConfig, TrainConfig


class EpochMetrics(BaseModel):
    """One row of the metrics CSV"""
    epoch: int
    train_mae: float
    val_mae: float
    wall_seconds: float = 0.0


class TrainReport(BaseModel):
    """Learning curves and best-validation metadata of one fit"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    epochs: List[EpochMetrics] = []
    best_epoch: int = -1
    best_val_mae: float = float("inf")
    wall_time: float = 0.0
    stopped_early: bool = False

    @property
    def train_curve(self) -> List[float]:
        return [e.train_mae for e in self.epochs]

    @property
    def val_curve(self) -> List[float]:
        return [e.val_mae for e in self.epochs]


class BoxStats(BaseModel):
    """Boxplot statistics with whiskers at the 10th and 90th percentile"""
    name: str = ""
    p10: float
    p25: float
    median: float
    p75: float
    p90: float
    outliers: List[float] = []
    n: int = Field(ge=1)

    @model_validator(mode="after")
    def check_order(self) -> "BoxStats":
        """Percentiles must be non-decreasing"""
        if not self.p10 <= self.p25 <= self.median <= self.p75 <= self.p90:
            raise ValueError(f"Unordered box statistics for {self.name!r}")
        return self

    def csv_row(self) -> List[str]:
        return [self.name] + [repr(v) for v in (self.p10, self.p25, self.median, self.p75, self.p90)] + [str(self.n)]


class SampleError(BaseModel):
    """Per-sample evaluation row in degrees Celsius"""
    sample_id: int
    start: str
    mae_delay: float
    mae_zero: float


class SubsetReport(BaseModel):
    """Evaluation summary over one subset of validation samples"""
    kind: str
    n_samples: int
    mae_delay: Optional[float] = None
    mae_zero: Optional[float] = None
    box_delay: Optional[BoxStats] = None
    box_zero: Optional[BoxStats] = None


class EvalReport(BaseModel):
    """Output of the eval workflow"""
    n_samples: int
    mae_delay: float
    mae_zero: float
    ema_mae_delay: float
    ema_mae_zero: float
    alpha: float
    sample_period: int
    subsets: List[SubsetReport] = []


class GradCheckResult(BaseModel):
    """One finite-difference gradient check"""
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool


class AblationRow(BaseModel):
    """Best validation MAE over trials for one identity-replacement variant"""
    label: str
    identity_positions: List[str]
    norm_kind: NormKind
    trial_maes: List[float]
    box: BoxStats


class AblationReport(BaseModel):
    """Full ablation table plus the Zero reference line"""
    rows: List[AblationRow]
    zero_mae: float


class DelayRecoveryResult(BaseModel):
    """Learned Gauss center versus the plant's true dead time"""
    dead_time_steps: int
    seed: int
    learned_mu: float
    recovered: bool


class HexArray(BaseModel):
    """float64 array stored as float.hex strings"""
    shape: List[int]
    data: List[str]


class Checkpoint(BaseModel):
    """Portable snapshot of a trained network"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    format_version: int = CHECKPOINT_FORMAT_VERSION
    net: Optional[DelayNetConfig] = None
    train: TrainConfig = TrainConfig()
    pipeline: PipelineConfig = PipelineConfig()
    parameters: Dict[str, HexArray]
    buffers: Dict[str, HexArray] = {}
    best_val_mae: float = float("inf")
    best_epoch: int = -1
    seed: int = 0
