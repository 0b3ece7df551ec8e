"""
Experiment manager tying the pipeline, training and evaluation together
"""
import json
import logging
import os
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel

from .checkpoint import CheckpointStore, restore
from .const import (
    ABLATION_FILE,
    BOXSTATS_FILE,
    GRADCHECK_FILE,
    GROUND_TRUTH_FILE,
    MANIFEST_FILE,
    METRICS_FILE,
    RECOVERY_FILE,
    REPORT_FILE,
    ROLLING_FILE,
    SAMPLE_ERRORS_FILE,
    SERIES_FILE,
    SubsetKind,
)
from .datapipe import (
    default_boundary,
    load_manifest,
    load_samples,
    load_series,
    prepare_samples,
    save_samples,
    select_subset,
    split_train_val,
)
from .errors import DataError, StateError
from .evaluation import (
    ablation_grid,
    box_stats,
    ema_rolling_eval,
    gradcheck_suite,
    recover_delay,
    sample_errors,
    write_box_stats,
    write_sample_errors,
)
from .model import ZeroPredictor, build
from .models import (
    AblationReport,
    BoxStats,
    DelayNetConfig,
    DelayRecoveryResult,
    EvalReport,
    GradCheckResult,
    Manifest,
    RunConfig,
    SubsetReport,
    TrainReport,
)
from .plantsim import load_ground_truth, simulate, write_simulation
from .train import fit, write_metrics

_LOGGER = logging.getLogger(__name__)


class ExperimentManager:
    """Class for running delaynet workflows from one RunConfig"""

    def __init__(self, config: Optional[Any] = None):
        """Initialize the experiment manager

        Args:
            config: RunConfig or a dictionary validated into one (defaults to all defaults)
        """
        if isinstance(config, RunConfig):
            self.config = config
        else:
            self.config = RunConfig.model_validate(config or {})
        if self.config.seed is not None:
            self.config = self.config.with_seed(self.config.seed)

    @property
    def seed(self) -> int:
        return self.config.seed if self.config.seed is not None else self.config.train.seed

    def net_config(self, manifest: Manifest) -> DelayNetConfig:
        """Network config with data-dependent sizes taken from the manifest"""
        return self.config.net_config(
            F=len(manifest.columns),
            C=len(manifest.commands),
            Fy=len(manifest.targets),
            S=manifest.pipeline.past_steps,
            T=manifest.pipeline.future_steps,
        )

    def simulate(self, out_dir: str) -> Dict[str, Any]:
        """Generate plant data with a ground-truth sidecar

        Args:
            out_dir: Output directory

        Returns:
            Dict[str, Any]: Summary of the generated series
        """
        sim = simulate(self.config.plant, pipeline=self.config.pipeline)
        write_simulation(sim, out_dir)
        return {
            "rows": len(sim.table.frame),
            "dead_time_steps": sim.ground_truth.dead_time_steps,
            "events": len(sim.ground_truth.events),
            "gaps": len(sim.ground_truth.gaps),
            "out_dir": out_dir,
        }

    def prepare(self, data_dir: str, out_dir: str) -> Dict[str, Any]:
        """Turn a series CSV and manifest into a split sample cache

        Args:
            data_dir: Directory holding series.csv and manifest.json
            out_dir: Sample cache directory

        Returns:
            Dict[str, Any]: Sample counts and the split boundary
        """
        manifest = load_manifest(os.path.join(data_dir, MANIFEST_FILE))
        manifest = manifest.model_copy(update={"pipeline": self.config.pipeline})
        table = load_series(os.path.join(data_dir, SERIES_FILE), manifest)
        samples = prepare_samples(table, self.config.pipeline)
        boundary = default_boundary(table, self.config.val_fraction)
        train, val = split_train_val(samples, boundary)
        if not train or not val:
            raise DataError(f"Split at {boundary} leaves {len(train)} train and {len(val)} val samples")
        index = save_samples(out_dir, train, val, manifest, boundary)
        return {"train": len(train), "val": len(val), "boundary": index.boundary, "out_dir": out_dir}

    def train(self, samples_dir: str, out_dir: str) -> TrainReport:
        """Fit the configured architecture and write checkpoint, metrics and report

        Args:
            samples_dir: Sample cache written by prepare
            out_dir: Output directory

        Returns:
            TrainReport: Learning curves of the fit
        """
        train, val, manifest = load_samples(samples_dir)
        net = build(self.net_config(manifest), seed=self.seed)
        _LOGGER.info(f"Training {self.config.architecture or 'custom'} network with {net.param_count()} parameters")
        checkpoint, report = fit(net, train, val, self.config.train, pipeline=manifest.pipeline, seed=self.seed)

        os.makedirs(out_dir, exist_ok=True)
        CheckpointStore(out_dir).save(checkpoint)
        write_metrics(report, os.path.join(out_dir, METRICS_FILE))
        if not self.config.train.record_wall_time:
            report = report.model_copy(update={"wall_time": 0.0})
        _write_json(os.path.join(out_dir, REPORT_FILE), report)
        return report

    def evaluate(self, checkpoint_dir: str, samples_dir: str, out_dir: str, data_dir: Optional[str] = None) -> EvalReport:
        """Evaluate a checkpoint on the validation split

        Writes per-sample errors, boxplot statistics per subset, the EMA
        rolling series and a JSON report.

        Args:
            checkpoint_dir: Directory with checkpoint.json
            samples_dir: Sample cache written by prepare
            out_dir: Output directory
            data_dir: Directory with the plant ground truth, needed for the quiet subset

        Returns:
            EvalReport: MAE of the network and the Zero predictor in degrees Celsius
        """
        checkpoint = CheckpointStore(checkpoint_dir).load()
        if checkpoint is None:
            raise StateError(f"No checkpoint in {checkpoint_dir}")
        net = restore(checkpoint)
        _, val, manifest = load_samples(samples_dir)
        if not val:
            raise DataError(f"No validation samples in {samples_dir}")
        ground_truth = load_ground_truth(os.path.join(data_dir, GROUND_TRUTH_FILE)) if data_dir else None
        eval_cfg = self.config.eval
        Fy = len(manifest.targets)

        errors = sample_errors(net, val, Fy)
        zero = ZeroPredictor(Fy, manifest.pipeline.future_steps)
        minutes = manifest.pipeline.minutes_per_step
        rolling = ema_rolling_eval(net, val, eval_cfg.alpha, eval_cfg.sample_period, minutes)
        rolling_zero = ema_rolling_eval(zero, val, eval_cfg.alpha, eval_cfg.sample_period, minutes)

        subsets: List[SubsetReport] = []
        boxes: List[BoxStats] = []
        by_sample = {id(s): e for s, e in zip(val, errors)}
        for kind in eval_cfg.subsets:
            if kind == SubsetKind.QUIET and ground_truth is None:
                _LOGGER.warning("Skipping the quiet subset: no ground truth available")
                continue
            if kind == SubsetKind.COLD and eval_cfg.cold_column not in manifest.names:
                _LOGGER.warning(f"Skipping the cold subset: no column {eval_cfg.cold_column!r}")
                continue
            chosen = select_subset(val, kind, manifest, ground_truth, eval_cfg.cold_column, eval_cfg.cold_threshold)
            subsets.append(_subset_report(SubsetKind(kind).value, [by_sample[id(s)] for s in chosen], boxes))

        report = EvalReport(
            n_samples=len(val),
            mae_delay=sum(e.mae_delay for e in errors) / len(errors),
            mae_zero=sum(e.mae_zero for e in errors) / len(errors),
            ema_mae_delay=rolling.mae,
            ema_mae_zero=rolling_zero.mae,
            alpha=eval_cfg.alpha,
            sample_period=eval_cfg.sample_period,
            subsets=subsets,
        )
        os.makedirs(out_dir, exist_ok=True)
        write_sample_errors(errors, os.path.join(out_dir, SAMPLE_ERRORS_FILE))
        write_box_stats(boxes, os.path.join(out_dir, BOXSTATS_FILE))
        rolling.frame(manifest.targets).to_csv(os.path.join(out_dir, ROLLING_FILE), index=False, lineterminator="\n", float_format="%.10g")
        _write_json(os.path.join(out_dir, REPORT_FILE), report)
        _LOGGER.info(
            f"Validation MAE {report.mae_delay:.4f} (Zero {report.mae_zero:.4f}), "
            f"EMA MAE {report.ema_mae_delay:.4f} (Zero {report.ema_mae_zero:.4f})"
        )
        return report

    def ablate(self, samples_dir: str, out_dir: str) -> AblationReport:
        """Run the Identity-replacement grid and write its box statistics"""
        train, val, manifest = load_samples(samples_dir)
        ablation = self.config.ablation
        report = ablation_grid(
            self.net_config(manifest),
            ablation.positions,
            (train, val),
            ablation.trials,
            train_cfg=self.config.train,
            norm_variants=ablation.norm_variants,
            max_workers=ablation.max_workers,
            seed=self.seed,
        )
        os.makedirs(out_dir, exist_ok=True)
        zero_line = BoxStats(name="Zero", p10=report.zero_mae, p25=report.zero_mae, median=report.zero_mae,
                             p75=report.zero_mae, p90=report.zero_mae, n=1)
        write_box_stats([row.box for row in report.rows] + [zero_line], os.path.join(out_dir, ABLATION_FILE))
        _write_json(os.path.join(out_dir, REPORT_FILE), report)
        return report

    def gradcheck(self, out_dir: Optional[str] = None, points: int = 20) -> List[GradCheckResult]:
        """Run the finite-difference suite, optionally writing the results"""
        results = gradcheck_suite(seed=self.seed, points=points)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            _write_json(os.path.join(out_dir, GRADCHECK_FILE), [r.model_dump(mode="json") for r in results])
        return results

    def recover_delay(self, out_dir: Optional[str] = None) -> List[DelayRecoveryResult]:
        """Delay-recovery experiment over the configured dead times and seeds"""
        recovery = self.config.recovery
        results = [
            recover_delay(d, self.seed + i, recovery, self.config.plant)
            for d in recovery.dead_times
            for i in range(recovery.seeds)
        ]
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            frame = pd.DataFrame([r.model_dump() for r in results], columns=["dead_time_steps", "seed", "learned_mu", "recovered"])
            frame.to_csv(os.path.join(out_dir, RECOVERY_FILE), index=False, lineterminator="\n", float_format="%.10g")
        for d in recovery.dead_times:
            hits = sum(r.recovered for r in results if r.dead_time_steps == d)
            _LOGGER.info(f"Dead time {d}: recovered in {hits} of {recovery.seeds} seeds")
        return results


def _subset_report(kind: str, errors: list, boxes: List[BoxStats]) -> SubsetReport:
    if not errors:
        _LOGGER.warning(f"Subset {kind} is empty")
        return SubsetReport(kind=kind, n_samples=0)
    box_delay = box_stats([e.mae_delay for e in errors], name=f"{kind}:delay")
    box_zero = box_stats([e.mae_zero for e in errors], name=f"{kind}:zero")
    boxes.extend([box_delay, box_zero])
    return SubsetReport(
        kind=kind,
        n_samples=len(errors),
        mae_delay=sum(e.mae_delay for e in errors) / len(errors),
        mae_zero=sum(e.mae_zero for e in errors) / len(errors),
        box_delay=box_delay,
        box_zero=box_zero,
    )


def _write_json(path: str, payload: Any) -> None:
    with open(path, "w") as f:
        if isinstance(payload, BaseModel):
            f.write(payload.model_dump_json(indent=2))
        else:
            json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
