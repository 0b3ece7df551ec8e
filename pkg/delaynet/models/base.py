"""
Pydantic configuration models for the delaynet toolkit
"""
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from ..const import (
    BN_EPS,
    BN_MOMENTUM,
    CAUSAL_KERNEL_SIZE,
    D_AFF_AFF_GAU,
    D_LOG_AFF_GAU,
    DEFAULT_ANCHOR_FRACTION,
    DEFAULT_EMA_ALPHA,
    DEFAULT_FUTURE_STEPS,
    DEFAULT_MAX_GAP_MINUTES,
    DEFAULT_PAST_STEPS,
    DEFAULT_SAMPLE_PERIOD,
    DEFAULT_STRIDE_MINUTES,
    DEFAULT_WINDOW_MINUTES,
    GABOR_BANDWIDTH_OCTAVES,
    RAW_MINUTES_PER_STEP,
    STD_FLOOR,
    BlockPosition,
    FilterFamily,
    FilterMode,
    NormKind,
    SubsetKind,
    TemporalKind,
)
from ..errors import ConfigurationError


class PlantConfig(BaseModel):
    """Configuration of the synthetic delayed thermal plant

    Time constants, dead time and event durations are in plant steps.
    """
    dead_time_steps: int = Field(default=8, ge=0)
    inertia_tau: float = Field(default=40.0, gt=0)
    gain: float = 15.0
    outside_mean: float = 5.0
    outside_amplitude: float = 5.0
    outside_period_steps: int = Field(default=480, gt=0)
    outside_noise_std: float = Field(default=0.05, ge=0)
    fluid_base: float = 20.0
    fluid_gain: float = 40.0
    fluid_tau: float = Field(default=3.0, gt=0)
    noise_std: float = Field(default=0.02, ge=0)
    command_hold_min: int = Field(default=10, ge=1)
    command_hold_max: int = Field(default=60, ge=1)
    disturbance_rate: float = Field(default=2.0, ge=0)
    disturbance_magnitude: float = Field(default=0.03, ge=0, le=1)
    disturbance_duration: int = Field(default=10, ge=1)
    gap_rate: float = Field(default=0.0, ge=0)
    max_gap_len_minutes: int = Field(default=30, ge=1)
    minutes_per_step: int = Field(default=RAW_MINUTES_PER_STEP, ge=1)
    n_steps: int = Field(default=20000, gt=0)
    start: str = "2023-01-01T00:00:00"
    seed: int = 0

    @model_validator(mode="after")
    def check_hold_range(self) -> "PlantConfig":
        """Ensure the command hold range is ordered"""
        if self.command_hold_max < self.command_hold_min:
            raise ValueError("command_hold_max must be >= command_hold_min")
        return self


class PipelineConfig(BaseModel):
    """Preprocessing constants shared by datapipe and the data manifest"""
    window_minutes: int = Field(default=DEFAULT_WINDOW_MINUTES, gt=0)
    stride_minutes: int = Field(default=DEFAULT_STRIDE_MINUTES, gt=0)
    past_steps: int = Field(default=DEFAULT_PAST_STEPS, gt=0)
    future_steps: int = Field(default=DEFAULT_FUTURE_STEPS, gt=0)
    minutes_per_step: int = Field(default=RAW_MINUTES_PER_STEP, ge=1)
    anchor_fraction: float = Field(default=DEFAULT_ANCHOR_FRACTION, gt=0, le=1)
    max_gap_minutes: int = Field(default=DEFAULT_MAX_GAP_MINUTES, ge=1)
    std_floor: float = Field(default=STD_FLOOR, gt=0)

    @model_validator(mode="after")
    def check_window_length(self) -> "PipelineConfig":
        """A window must average to exactly S + T steps"""
        expected = (self.past_steps + self.future_steps) * self.minutes_per_step
        if self.window_minutes != expected:
            raise ValueError(
                f"window_minutes {self.window_minutes} != (past_steps + future_steps) * minutes_per_step = {expected}"
            )
        return self

    @property
    def anchor_steps(self) -> int:
        return max(1, int(round(self.anchor_fraction * self.past_steps)))


class NormalInit(BaseModel):
    """Mean and standard deviation of a normal initializer"""
    mean: float = 0.0
    std: float = Field(default=0.0, ge=0)


class KernelInit(BaseModel):
    """Initialization distributions per kernel family

    The gauss mu and gabor mu stdevs scale with S: std = gauss_mu_scale * S / 2
    and std = gabor_mu_scale / S respectively.
    """
    affine_s: NormalInit = NormalInit(mean=0.0, std=0.15)
    affine_t: NormalInit = NormalInit(mean=0.0, std=0.1)
    gauss_sigma: NormalInit = NormalInit(mean=0.0, std=0.1)
    gauss_mu_scale: float = 0.01
    lognormal_s: NormalInit = NormalInit(mean=0.0, std=0.5)
    lognormal_t: NormalInit = NormalInit(mean=0.0, std=0.1)
    gabor_s: NormalInit = NormalInit(mean=2.0, std=1.0)
    gabor_mu_scale: float = 0.2


class FilterBankConfig(BaseModel):
    """One filter bank: n learnable kernels per input feature"""
    family: FilterFamily = FilterFamily.GAUSS
    n_filters: int = Field(default=1, ge=1)
    mode: FilterMode = FilterMode.PER_FEATURE
    out_time: Optional[int] = Field(default=None, ge=1)
    apply_batchnorm: bool = True
    norm_kind: NormKind = NormKind.BATCHNORM
    kernel_support: Optional[int] = Field(default=None, ge=1)
    gabor_bandwidth: float = Field(default=GABOR_BANDWIDTH_OCTAVES, gt=0)
    init: KernelInit = KernelInit()

    @model_validator(mode="after")
    def identity_has_no_norm(self) -> "FilterBankConfig":
        """Identity banks never normalize"""
        if self.family == FilterFamily.IDENTITY:
            self.apply_batchnorm = False
        return self


class AggregatorConfig(BaseModel):
    """Per-timestep fully connected network

    out_features is filled in by the network builder when left unset.
    """
    n_intermediate: int = Field(default=1, ge=0)
    expansion: float = Field(default=1.0, gt=0)
    out_features: Optional[int] = Field(default=None, ge=1)


class DelayNetConfig(BaseModel):
    """Hyperparameters of the full Delay network"""
    F: int = Field(default=5, ge=1)
    S: int = Field(default=DEFAULT_PAST_STEPS, ge=1)
    C: int = Field(default=1, ge=1)
    T: int = Field(default=DEFAULT_FUTURE_STEPS, ge=1)
    Fy: int = Field(default=2, ge=1)
    Fc: int = Field(default=8, ge=1)
    n_low: int = Field(default=4, ge=1)
    n_high: int = Field(default=8, ge=1)
    filter_low: FilterFamily = FilterFamily.AFFINE
    filter_high: FilterFamily = FilterFamily.GAUSS
    mode_low: FilterMode = FilterMode.PER_FEATURE
    mode_high: FilterMode = FilterMode.PER_FEATURE
    temporal_kind: TemporalKind = TemporalKind.AFFINE
    agg_low: AggregatorConfig = AggregatorConfig(n_intermediate=1, expansion=1.0)
    agg_high: AggregatorConfig = AggregatorConfig(n_intermediate=1, expansion=1.0)
    norm_kind: NormKind = NormKind.BATCHNORM
    apply_batchnorm: bool = True
    kernel_support: Optional[int] = Field(default=None, ge=1)
    causal_kernel_size: int = Field(default=CAUSAL_KERNEL_SIZE, ge=1)
    gabor_bandwidth: float = Field(default=GABOR_BANDWIDTH_OCTAVES, gt=0)
    bn_eps: float = Field(default=BN_EPS, gt=0)
    bn_momentum: float = Field(default=BN_MOMENTUM, gt=0, le=1)
    init: KernelInit = KernelInit()

    @field_validator("temporal_kind", mode="before")
    def reject_gabor_temporal(cls, v):
        """Gabor doubles channels and cannot act as temporal aggregator"""
        if v in (FilterFamily.GABOR, FilterFamily.GABOR.value):
            raise ValueError("gabor is not a valid temporal kind")
        return v

    @model_validator(mode="after")
    def check_aggregator_outputs(self) -> "DelayNetConfig":
        """Aggregator outputs are fixed by Fc and Fy"""
        bad = []
        if self.agg_low.out_features not in (None, self.Fc):
            bad.append(f"agg_low.out_features={self.agg_low.out_features} (expected Fc={self.Fc})")
        if self.agg_high.out_features not in (None, self.Fy):
            bad.append(f"agg_high.out_features={self.agg_high.out_features} (expected Fy={self.Fy})")
        if bad:
            raise ValueError("; ".join(bad))
        return self

    def bank(self, position: BlockPosition) -> FilterBankConfig:
        """FilterBankConfig for the low or high bank

        Args:
            position: BlockPosition.LOW or BlockPosition.HIGH

        Returns:
            FilterBankConfig: Bank configuration derived from this network config
        """
        if position == BlockPosition.LOW:
            family, n, mode = self.filter_low, self.n_low, self.mode_low
            out_time = self.S
        elif position == BlockPosition.HIGH:
            family, n, mode = self.filter_high, self.n_high, self.mode_high
            out_time = self.T
        else:
            raise ConfigurationError(f"No filter bank at position {position}")
        return FilterBankConfig(
            family=family,
            n_filters=n,
            mode=mode,
            out_time=out_time if mode == FilterMode.PER_CELL else None,
            apply_batchnorm=self.apply_batchnorm,
            norm_kind=self.norm_kind,
            kernel_support=self.kernel_support,
            gabor_bandwidth=self.gabor_bandwidth,
            init=self.init,
        )

    def with_identity(self, positions: List[BlockPosition]) -> "DelayNetConfig":
        """Copy of this config with the named blocks replaced by Identity"""
        update: Dict[str, Any] = {}
        for position in positions:
            position = BlockPosition(position)
            if position == BlockPosition.LOW:
                update["filter_low"] = FilterFamily.IDENTITY
            elif position == BlockPosition.TEMPORAL:
                update["temporal_kind"] = TemporalKind.IDENTITY
            else:
                update["filter_high"] = FilterFamily.IDENTITY
        return self.model_copy(update=update)

    @classmethod
    def named(cls, name: str, **overrides: Any) -> "DelayNetConfig":
        """Build one of the registered architectures

        Args:
            name: D_AffAffGau or D_LogAffGau
            **overrides: Field values replacing the architecture defaults (F, S, ...)

        Returns:
            DelayNetConfig: Validated configuration
        """
        if name not in NAMED_ARCHITECTURES:
            raise ConfigurationError(f"Unknown architecture {name}; known: {sorted(NAMED_ARCHITECTURES)}")
        fields = dict(NAMED_ARCHITECTURES[name])
        fields.update(overrides)
        return cls.model_validate(fields)


NAMED_ARCHITECTURES: Dict[str, Dict[str, Any]] = {
    D_AFF_AFF_GAU: {
        "filter_low": FilterFamily.AFFINE,
        "n_low": 4,
        "agg_low": {"n_intermediate": 1, "expansion": 1.0},
        "Fc": 8,
        "temporal_kind": TemporalKind.AFFINE,
        "filter_high": FilterFamily.GAUSS,
        "n_high": 8,
        "agg_high": {"n_intermediate": 1, "expansion": 1.0},
    },
    D_LOG_AFF_GAU: {
        "filter_low": FilterFamily.LOGNORMAL,
        "n_low": 4,
        "agg_low": {"n_intermediate": 7, "expansion": 1.0},
        "Fc": 8,
        "temporal_kind": TemporalKind.AFFINE,
        "filter_high": FilterFamily.GAUSS,
        "n_high": 8,
        "agg_high": {"n_intermediate": 1, "expansion": 1.0},
    },
}


class TrainConfig(BaseModel):
    """Optimizer and early-stopping settings"""
    lr: float = Field(default=1e-3, ge=0)
    max_epochs: int = Field(default=500, ge=1)
    patience: int = Field(default=20, ge=1)
    batch_size: int = Field(default=64, ge=1)
    grad_clip: Optional[float] = Field(default=5.0, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    record_wall_time: bool = False
    seed: int = 0


class EvalConfig(BaseModel):
    """Rolling evaluation settings"""
    alpha: float = Field(default=DEFAULT_EMA_ALPHA, gt=0, lt=1)
    sample_period: int = Field(default=DEFAULT_SAMPLE_PERIOD, ge=1)
    cold_threshold: float = 5.0
    cold_column: str = "outside_temp"
    subsets: List[SubsetKind] = [SubsetKind.ALL, SubsetKind.COLD, SubsetKind.QUIET]


class AblationConfig(BaseModel):
    """Identity-replacement grid"""
    positions: List[BlockPosition] = [BlockPosition.LOW, BlockPosition.TEMPORAL, BlockPosition.HIGH]
    trials: int = Field(default=5, ge=1)
    norm_variants: List[NormKind] = [NormKind.BATCHNORM]
    max_workers: Optional[int] = Field(default=None, ge=1)


class RecoveryConfig(BaseModel):
    """Delay-recovery experiment with a single Gauss bank"""
    dead_times: List[int] = [3, 8, 15]
    seeds: int = Field(default=10, ge=1)
    n_steps: int = Field(default=6000, gt=0)
    support: int = Field(default=41, ge=1)
    past_steps: int = Field(default=60, ge=1)
    tolerance: float = Field(default=1.0, ge=0)
    train: TrainConfig = TrainConfig(lr=0.05, max_epochs=200, patience=200, batch_size=64)


class RunConfig(BaseModel):
    """Top level config file contents; every section is optional"""
    architecture: Optional[str] = D_AFF_AFF_GAU
    plant: PlantConfig = PlantConfig()
    pipeline: PipelineConfig = PipelineConfig()
    net: Dict[str, Any] = {}
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    ablation: AblationConfig = AblationConfig()
    recovery: RecoveryConfig = RecoveryConfig()
    val_fraction: float = Field(default=0.2, gt=0, lt=1)
    seed: Optional[int] = None

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with every seed replaced

        Args:
            seed: New seed for plant, training and network initialization

        Returns:
            RunConfig: Updated copy
        """
        return self.model_copy(
            update={
                "seed": seed,
                "plant": self.plant.model_copy(update={"seed": seed}),
                "train": self.train.model_copy(update={"seed": seed}),
            }
        )

    def net_config(self, **overrides: Any) -> DelayNetConfig:
        """Resolve the network config from the architecture name plus overrides

        Args:
            **overrides: Fields taking precedence over the config file (e.g. F, C, Fy from a manifest)

        Returns:
            DelayNetConfig: Validated network config
        """
        fields = dict(self.net)
        fields.update(overrides)
        if self.architecture:
            return DelayNetConfig.named(self.architecture, **fields)
        return DelayNetConfig.model_validate(fields)
