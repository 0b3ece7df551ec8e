"""
Rolling EMA evaluation, boxplot statistics, the Identity ablation grid,
delay recovery and the gradient check suite
"""
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .autodiff import Tensor, conv1d_depthwise, grad_check
from .const import RAW_MINUTES_PER_STEP, BlockPosition, FilterFamily, FilterMode, NormKind, Padding, TemporalKind
from .datapipe import SampleWindow, denormalize, format_timestamp, stack_samples
from .errors import ConfigurationError, DataError
from .kernels import (
    affine_warp,
    gabor_kernel,
    gabor_response,
    gabor_support,
    gauss_kernel,
    init_params,
    lognormal_kernel,
    odd_at_most,
)
from .layers import Aggregator, BatchNorm, CausalConv, FilterBank, Module, TemporalAggregator
from .model import ZeroPredictor, build
from .models import (
    AblationReport,
    AblationRow,
    AggregatorConfig,
    BoxStats,
    DelayNetConfig,
    DelayRecoveryResult,
    FilterBankConfig,
    GradCheckResult,
    KernelInit,
    NormalInit,
    PlantConfig,
    RecoveryConfig,
    SampleError,
    TrainConfig,
)
from .plantsim import run_plant
from .train import fit, predict

_LOGGER = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
GABOR_GRADCHECK_TOLERANCE = 1e-3
ABLATION_ORDER = [BlockPosition.LOW, BlockPosition.TEMPORAL, BlockPosition.HIGH]


def ema_aggregate(predictions: Sequence[np.ndarray], alpha: float) -> np.ndarray:
    """Exponential average of predictions ordered oldest first

    e <- (1 - alpha) * e + alpha * p, starting from the oldest prediction, so
    the newest prediction has weight alpha.
    """
    if not predictions:
        raise DataError("No predictions to aggregate")
    aggregate = np.asarray(predictions[0], dtype=np.float64).copy()
    for p in predictions[1:]:
        aggregate = (1.0 - alpha) * aggregate + alpha * np.asarray(p, dtype=np.float64)
    return aggregate


@dataclass
class RollingResult:
    """EMA-aggregated predictions per model step, in degrees Celsius"""
    steps: np.ndarray
    aggregated: np.ndarray
    truth: np.ndarray
    counts: np.ndarray
    mae: float

    def frame(self, columns: Sequence[str]) -> pd.DataFrame:
        data = {"step": self.steps, "n_predictions": self.counts}
        for i, name in enumerate(columns):
            data[f"{name}_pred"] = self.aggregated[:, i]
            data[f"{name}_true"] = self.truth[:, i]
        return pd.DataFrame(data)


def ema_rolling_eval(
    net: Callable,
    windows: Sequence[SampleWindow],
    alpha: float,
    sample_period: int,
    minutes_per_step: int = RAW_MINUTES_PER_STEP,
) -> RollingResult:
    """Aggregate overlapping rolling predictions per future time step

    A window issues a prediction when it starts at least sample_period model
    steps after the previous issuing window. Each prediction covers the model
    steps S..S+T-1 of its window, keyed on the common step grid of the first
    window. The truth at a step is taken from the newest covering window.

    Args:
        net: Model callable as net(x1, x2, training=False)
        windows: Samples ordered by start time
        alpha: Weight of the newest prediction, in (0, 1)
        sample_period: Model steps between fresh predictions
        minutes_per_step: Raw minutes per model step

    Returns:
        RollingResult: Aggregated predictions and MAE in degrees Celsius

    Raises:
        ConfigurationError: If alpha or sample_period are out of range
        DataError: If the windows are empty or not strictly ordered by start
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"EMA alpha must be in (0, 1), got {alpha}")
    if sample_period < 1:
        raise ConfigurationError(f"sample_period must be >= 1, got {sample_period}")
    if not windows:
        raise DataError("No windows to evaluate")
    starts = [pd.Timestamp(w.start) for w in windows]
    for a, b in zip(starts[:-1], starts[1:]):
        if b <= a:
            raise DataError(f"Windows are not ordered by time: {format_timestamp(b)} follows {format_timestamp(a)}")

    origin = starts[0]
    issuing: List[Tuple[int, SampleWindow]] = []
    last_offset: Optional[int] = None
    for start, w in zip(starts, windows):
        offset = int(round((start - origin).total_seconds() / 60.0 / minutes_per_step))
        if last_offset is None or offset - last_offset >= sample_period:
            issuing.append((offset, w))
            last_offset = offset

    x1, x2, _ = stack_samples([w for _, w in issuing])
    normalized = predict(net, x1, x2)
    per_step: Dict[int, List[np.ndarray]] = {}
    truth: Dict[int, np.ndarray] = {}
    for (offset, w), pred in zip(issuing, normalized):
        S = w.x1.shape[1]
        celsius = denormalize(pred, w)
        true = denormalize(w.y, w)
        for tau in range(celsius.shape[1]):
            step = offset + S + tau
            per_step.setdefault(step, []).append(celsius[:, tau])
            truth[step] = true[:, tau]

    steps = np.array(sorted(per_step), dtype=np.int64)
    aggregated = np.stack([ema_aggregate(per_step[s], alpha) for s in steps])
    true = np.stack([truth[s] for s in steps])
    counts = np.array([len(per_step[s]) for s in steps], dtype=np.int64)
    mae = float(np.mean(np.abs(aggregated - true)))
    _LOGGER.debug(f"EMA evaluation over {len(issuing)} predictions and {len(steps)} steps: MAE {mae:.4f}")
    return RollingResult(steps=steps, aggregated=aggregated, truth=true, counts=counts, mae=mae)


def box_stats(values: Sequence[float], name: str = "") -> BoxStats:
    """Percentile box with whiskers at 10 and 90, linear interpolation

    Raises:
        DataError: If values is empty
    """
    array = np.asarray(list(values), dtype=np.float64)
    if array.size == 0:
        raise DataError(f"Cannot compute box statistics of an empty list{' for ' + name if name else ''}")
    p10, p25, median, p75, p90 = (float(v) for v in np.percentile(array, [10, 25, 50, 75, 90], method="linear"))
    # Rounding can break monotonicity by one ulp
    p25, median = max(p25, p10), max(median, p25)
    p75, p90 = max(p75, median), max(p90, max(p75, median))
    outliers = [float(v) for v in array if v < p10 or v > p90]
    return BoxStats(name=name, p10=p10, p25=p25, median=median, p75=p75, p90=p90, outliers=outliers, n=int(array.size))


def write_box_stats(rows: Sequence[BoxStats], path: str) -> None:
    """BoxStats CSV with header name,p10,p25,median,p75,p90,n"""
    frame = pd.DataFrame(
        [[b.name, b.p10, b.p25, b.median, b.p75, b.p90, b.n] for b in rows],
        columns=["name", "p10", "p25", "median", "p75", "p90", "n"],
    )
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def sample_errors(net: Callable, samples: Sequence[SampleWindow], Fy: int) -> List[SampleError]:
    """Per-sample MAE in degrees Celsius for the network and the Zero predictor"""
    if not samples:
        raise DataError("No samples to evaluate")
    x1, x2, y = stack_samples(samples)
    pred = predict(net, x1, x2)
    zero = predict(ZeroPredictor(Fy, y.shape[2]), x1, x2)
    errors = []
    for i, s in enumerate(samples):
        true = denormalize(s.y, s)
        errors.append(
            SampleError(
                sample_id=i,
                start=format_timestamp(s.start),
                mae_delay=float(np.mean(np.abs(denormalize(pred[i], s) - true))),
                mae_zero=float(np.mean(np.abs(denormalize(zero[i], s) - true))),
            )
        )
    return errors


def write_sample_errors(errors: Sequence[SampleError], path: str) -> None:
    frame = pd.DataFrame([e.model_dump() for e in errors], columns=["sample_id", "start", "mae_delay", "mae_zero"])
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def ablation_label(positions: Sequence[BlockPosition], norm_kind: NormKind = NormKind.BATCHNORM) -> str:
    """One character per block in low/temporal/high order, I where replaced by Identity"""
    replaced = {BlockPosition(p) for p in positions}
    label = "".join("I" if p in replaced else "*" for p in ABLATION_ORDER)
    return label if norm_kind == NormKind.BATCHNORM else f"{label}:{NormKind(norm_kind).value}"


def ablation_variants(positions: Sequence[BlockPosition]) -> List[List[BlockPosition]]:
    """Every subset of positions, smallest first"""
    ordered = [p for p in ABLATION_ORDER if p in {BlockPosition(q) for q in positions}]
    return [list(c) for k in range(len(ordered) + 1) for c in itertools.combinations(ordered, k)]


def _ablation_trial(
    label: str,
    trial: int,
    cfg: DelayNetConfig,
    train_set: Tuple[np.ndarray, np.ndarray, np.ndarray],
    val_set: Tuple[np.ndarray, np.ndarray, np.ndarray],
    train_cfg: TrainConfig,
    seed: int,
) -> Tuple[str, int, float]:
    net = build(cfg, seed=seed)
    _, report = fit(net, train_set, val_set, train_cfg.model_copy(update={"seed": seed}), seed=seed)
    _LOGGER.info(f"Ablation {label} trial {trial}: best val MAE {report.best_val_mae:.5f}")
    return label, trial, report.best_val_mae


def ablation_grid(
    base_cfg: DelayNetConfig,
    positions: Sequence[BlockPosition],
    datasets: Tuple[Sequence[SampleWindow], Sequence[SampleWindow]],
    trials: int,
    train_cfg: Optional[TrainConfig] = None,
    norm_variants: Sequence[NormKind] = (NormKind.BATCHNORM,),
    max_workers: Optional[int] = None,
    seed: int = 0,
) -> AblationReport:
    """Retrain every Identity-replacement variant from fresh seeds

    Args:
        base_cfg: Network to ablate
        positions: Blocks eligible for replacement
        datasets: (train, val) samples
        trials: Fresh seeds per variant
        train_cfg: Training settings shared by every trial
        norm_variants: Post-filter normalizations to sweep
        max_workers: Worker processes; 1 runs inline
        seed: Base seed; trial i uses a seed derived from (seed, i)

    Returns:
        AblationReport: One row per variant plus the Zero-predictor MAE
    """
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")
    train_cfg = train_cfg or TrainConfig()
    train_set = stack_samples(list(datasets[0]))
    val_set = stack_samples(list(datasets[1]))
    trial_seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(trials)]

    jobs = []
    variants: Dict[str, Tuple[List[BlockPosition], NormKind]] = {}
    for norm_kind in norm_variants:
        for replaced in ablation_variants(positions):
            label = ablation_label(replaced, norm_kind)
            cfg = base_cfg.with_identity(replaced).model_copy(update={"norm_kind": NormKind(norm_kind)})
            variants[label] = (replaced, NormKind(norm_kind))
            for trial, trial_seed in enumerate(trial_seeds):
                jobs.append((label, trial, cfg, train_set, val_set, train_cfg, trial_seed))
    _LOGGER.info(f"Ablation grid: {len(variants)} variants x {trials} trials")

    if max_workers == 1:
        results = [_ablation_trial(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_ablation_trial, *job) for job in jobs]
            results = [f.result() for f in futures]

    maes: Dict[str, List[Tuple[int, float]]] = {label: [] for label in variants}
    for label, trial, value in results:
        maes[label].append((trial, value))
    rows = []
    for label, (replaced, norm_kind) in variants.items():
        values = [v for _, v in sorted(maes[label])]
        rows.append(
            AblationRow(
                label=label,
                identity_positions=[p.value for p in replaced],
                norm_kind=norm_kind,
                trial_maes=values,
                box=box_stats(values, name=label),
            )
        )
    zero_mae = float(np.mean(np.abs(val_set[2])))
    return AblationReport(rows=rows, zero_mae=zero_mae)


class RecoveryModel(Module):
    """Single per-feature Gauss bank followed by a one-layer aggregator"""

    def __init__(self, n_features: int, past_steps: int, support: int, seed: int = 0):
        super().__init__()
        cfg = FilterBankConfig(
            family=FilterFamily.GAUSS,
            n_filters=1,
            mode=FilterMode.PER_FEATURE,
            apply_batchnorm=False,
            kernel_support=support,
            init=KernelInit(gauss_sigma=NormalInit(mean=1.5, std=0.0)),
        )
        seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(2)]
        self.bank = self.register_module("bank", FilterBank(cfg, n_features, past_steps, seed=seeds[0]))
        self.agg = self.register_module(
            "agg", Aggregator(AggregatorConfig(n_intermediate=0), n_features, 1, seed=seeds[1])
        )

    def forward(self, x1: Tensor, x2: Tensor, training: Optional[bool] = None) -> Tensor:
        out = self.agg(self.bank(x1))
        T = out.shape[2]
        return out[:, :, T - 1:]

    def mu(self, feature: int) -> float:
        return float(self.bank.params["mu"].data[feature])


def recovery_dataset(
    plant: PlantConfig, n_steps: int, past_steps: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plant-step windows of [command, room, outside] and the next room increment

    Every row is standardized with whole-run statistics; the target is divided
    by its standard deviation.
    """
    trace, _ = run_plant(plant, n_steps)
    signals = np.stack([trace.command, trace.room, trace.outside])
    signals = (signals - signals.mean(axis=1, keepdims=True)) / np.maximum(signals.std(axis=1, keepdims=True), 1e-6)
    increment = np.diff(trace.room)
    increment = (increment - increment.mean()) / max(increment.std(), 1e-6)
    ends = np.arange(past_steps - 1, n_steps - 1)
    x1 = np.stack([signals[:, k - past_steps + 1:k + 1] for k in ends])
    y = increment[ends].reshape(-1, 1, 1)
    x2 = np.zeros((len(ends), 1, 1))
    return x1, x2, y


def recover_delay(
    dead_time_steps: int,
    seed: int,
    cfg: Optional[RecoveryConfig] = None,
    plant: Optional[PlantConfig] = None,
) -> DelayRecoveryResult:
    """Train a single Gauss bank on plant data and read off the command delay

    The depthwise convolution reads x[t + o] at kernel offset o, so a command
    acting after d steps is picked up at mu = -d.

    Args:
        dead_time_steps: True plant dead time d
        seed: Plant and initialization seed
        cfg: Experiment settings
        plant: Base plant settings; dead time and seed are replaced

    Returns:
        DelayRecoveryResult: Learned center and whether |mu + d| <= tolerance
    """
    cfg = cfg or RecoveryConfig()
    plant = (plant or PlantConfig()).model_copy(update={"dead_time_steps": dead_time_steps, "seed": seed})
    x1, x2, y = recovery_dataset(plant, cfg.n_steps, cfg.past_steps)
    n_val = max(2, len(x1) // 5)
    train_set = (x1[:-n_val], x2[:-n_val], y[:-n_val])
    val_set = (x1[-n_val:], x2[-n_val:], y[-n_val:])

    net = RecoveryModel(x1.shape[1], cfg.past_steps, odd_at_most(cfg.support, cfg.past_steps), seed=seed)
    fit(net, train_set, val_set, cfg.train.model_copy(update={"seed": seed}), seed=seed)
    learned = net.mu(0)
    recovered = abs(learned + dead_time_steps) <= cfg.tolerance
    _LOGGER.info(f"Dead time {dead_time_steps}, seed {seed}: learned mu {learned:.3f}, recovered={recovered}")
    return DelayRecoveryResult(dead_time_steps=dead_time_steps, seed=seed, learned_mu=learned, recovered=recovered)


def _projection_check(
    name: str,
    params: Sequence[Tensor],
    out_fn: Callable[[], Tensor],
    rng: np.random.Generator,
    tolerance: float,
) -> GradCheckResult:
    weights = Tensor(rng.normal(size=out_fn().shape))
    error = grad_check(lambda: (out_fn() * weights).sum(), params)
    return GradCheckResult(name=name, max_rel_error=error, tolerance=tolerance, passed=error < tolerance)


def gradcheck_suite(seed: int = 0, points: int = 20) -> List[GradCheckResult]:
    """Finite-difference checks over every kernel family, layer and a tiny full network

    Args:
        seed: Base seed of the random points
        points: Random points per check

    Returns:
        List[GradCheckResult]: The worst result per check
    """
    F, S, C, T, Fc = 2, 12, 1, 6, 3
    B = 4
    worst: Dict[str, GradCheckResult] = {}

    def record(result: GradCheckResult) -> None:
        current = worst.get(result.name)
        if current is None or result.max_rel_error > current.max_rel_error:
            worst[result.name] = result

    for point in range(points):
        rng = np.random.default_rng([seed, point])
        x = Tensor(rng.normal(size=(B, F, S)), requires_grad=True)
        sub = int(rng.integers(0, 2**31 - 1))

        p = init_params(FilterFamily.GAUSS, S, sub, (F,))
        record(_projection_check("kernel.gauss", [p["mu"], p["sigma"], x],
                                 lambda: conv1d_depthwise(x, gauss_kernel(p, 7), Padding.SAME_ZERO), rng, GRADCHECK_TOLERANCE))
        p = init_params(FilterFamily.LOGNORMAL, S, sub, (F,))
        record(_projection_check("kernel.lognormal", [p["s"], p["t"], x],
                                 lambda: conv1d_depthwise(x, lognormal_kernel(p, 7), Padding.SAME_ZERO), rng, GRADCHECK_TOLERANCE))
        p = init_params(FilterFamily.AFFINE, S, sub, (F,))
        record(_projection_check("kernel.affine", [p["s"], p["t"], x], lambda: affine_warp(x, p), rng, GRADCHECK_TOLERANCE))
        p = init_params(FilterFamily.GABOR, S, sub, (F,))
        support = gabor_support(S)

        def gabor_out() -> Tensor:
            re, im = gabor_kernel(p, S, support=support)
            mag, ang = gabor_response(x, re, im, params=p)
            return mag + ang

        record(_projection_check("kernel.gabor", [p["s"], p["mu"], x], gabor_out, rng, GABOR_GRADCHECK_TOLERANCE))

        for family in (FilterFamily.AFFINE, FilterFamily.GAUSS, FilterFamily.LOGNORMAL, FilterFamily.GABOR):
            for mode in (FilterMode.PER_FEATURE, FilterMode.PER_CELL):
                bank_cfg = FilterBankConfig(family=family, n_filters=2, mode=mode, out_time=T if mode == FilterMode.PER_CELL else None)
                bank = FilterBank(bank_cfg, F, S, seed=sub)
                tolerance = GABOR_GRADCHECK_TOLERANCE if family == FilterFamily.GABOR else GRADCHECK_TOLERANCE
                record(_projection_check(f"layer.filter_bank.{family.value}.{mode.value}", bank.parameters() + [x],
                                         lambda: bank(x), rng, tolerance))

        bn = BatchNorm((F,), (0, 2))
        record(_projection_check("layer.batchnorm", bn.parameters() + [x], lambda: bn(x), rng, GRADCHECK_TOLERANCE))
        conv = CausalConv(F, 3, 5, seed=sub)
        record(_projection_check("layer.causal_conv", conv.parameters() + [x], lambda: conv(x), rng, GRADCHECK_TOLERANCE))
        agg = Aggregator(AggregatorConfig(n_intermediate=1), F, 3, seed=sub)
        record(_projection_check("layer.aggregator", agg.parameters() + [x], lambda: agg(x), rng, GRADCHECK_TOLERANCE))
        for kind in (TemporalKind.AFFINE, TemporalKind.GAUSS, TemporalKind.LOGNORMAL, TemporalKind.CAUSAL_CONV):
            temporal = TemporalAggregator(kind, F, S, T, seed=sub)
            record(_projection_check(f"layer.temporal.{kind.value}", temporal.parameters() + [x],
                                     lambda: temporal(x), rng, GRADCHECK_TOLERANCE))

        net = build(DelayNetConfig(F=F, S=S, C=C, T=T, Fy=1, Fc=Fc), seed=sub)
        net.train()
        x2 = Tensor(rng.normal(size=(B, C, T)))
        record(_projection_check("net.delaynet", net.parameters(), lambda: net(x, x2), rng, GRADCHECK_TOLERANCE))

    results = [worst[name] for name in sorted(worst)]
    failed = [r.name for r in results if not r.passed]
    if failed:
        _LOGGER.warning(f"Gradient check failed for {failed}")
    return results
