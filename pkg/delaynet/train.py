"""
MAE loss, clipped Adam and the early-stopping training loop
"""
import logging
import math
import time
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .autodiff import Tensor, as_tensor, no_grad
from .checkpoint import make_checkpoint
from .datapipe import SampleWindow, stack_samples
from .errors import ConfigurationError, DataError, NumericError
from .layers import BatchNorm, Module
from .models import Checkpoint, EpochMetrics, PipelineConfig, TrainConfig, TrainReport

_LOGGER = logging.getLogger(__name__)

Arrays = Tuple[np.ndarray, np.ndarray, np.ndarray]
Dataset = Union[Arrays, Sequence[SampleWindow]]


def mae(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements

    Raises:
        ConfigurationError: If the shapes differ
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ConfigurationError(f"mae: shape mismatch {pred.shape} vs {target.shape}")
    return (target - pred).abs().mean()


class Adam:
    """Adaptive moment estimation with optional global-norm gradient clipping"""

    def __init__(
        self,
        params: List[Tensor],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: Optional[float] = 5.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.exp_avg = [np.zeros_like(p.data) for p in self.params]
        self.exp_avg_sq = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params if p.grad is not None))

    def step(self) -> None:
        """Apply one update from the accumulated gradients"""
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        step_size = self.lr * math.sqrt(correction2) / correction1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            grad = p.grad * scale
            self.exp_avg[i] = self.beta1 * self.exp_avg[i] + (1.0 - self.beta1) * grad
            self.exp_avg_sq[i] = self.beta2 * self.exp_avg_sq[i] + (1.0 - self.beta2) * grad * grad
            p.data -= step_size * self.exp_avg[i] / (np.sqrt(self.exp_avg_sq[i]) + self.eps)


def as_arrays(data: Dataset) -> Arrays:
    if isinstance(data, tuple) and len(data) == 3 and isinstance(data[0], np.ndarray):
        return data
    return stack_samples(list(data))


def batches(n: int, batch_size: int, rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    """Index batches, shuffled when rng is given; a trailing batch of one joins the previous batch"""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def predict(net: Module, x1: np.ndarray, x2: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward over a dataset without building graphs"""
    net.eval()
    outputs = []
    with no_grad():
        for idx in batches(len(x1), batch_size):
            outputs.append(net(Tensor(x1[idx]), Tensor(x2[idx]), training=False).data)
    return np.concatenate(outputs, axis=0)


def evaluate(net: Module, data: Dataset, batch_size: int = 256) -> float:
    """Eval-mode MAE over a dataset"""
    x1, x2, y = as_arrays(data)
    if len(x1) == 0:
        raise DataError("Cannot evaluate on an empty dataset")
    return float(np.mean(np.abs(y - predict(net, x1, x2, batch_size))))


def _check_finite(net: Module, epoch: int, batch: int) -> None:
    for name, p in net.named_parameters():
        if not np.isfinite(p.data).all():
            raise NumericError(f"Parameter {name} became non-finite at epoch {epoch}, batch {batch}")


def _check_batch_statistics(net: Module, n_train: int, batch_size: int) -> None:
    """BatchNorm reduced over the batch axis alone needs two samples in every batch"""
    if not any(isinstance(m, BatchNorm) and m.axes == (0,) for m in net.modules()):
        return
    smallest = min(len(idx) for idx in batches(n_train, batch_size))
    if smallest < 2:
        raise DataError(
            f"Per-cell BatchNorm needs at least 2 samples per batch, got {n_train} train samples "
            f"with batch size {batch_size}"
        )


def fit(
    net: Module,
    train_set: Dataset,
    val_set: Dataset,
    cfg: TrainConfig,
    pipeline: Optional[PipelineConfig] = None,
    seed: int = 0,
) -> Tuple[Checkpoint, TrainReport]:
    """Mini-batch training with early stopping on validation MAE

    Args:
        net: Network with forward(x1, x2, training)
        train_set: Training samples or (x1, x2, y) arrays
        val_set: Validation samples or arrays
        cfg: Optimizer and stopping settings
        pipeline: Preprocessing constants echoed into the checkpoint
        seed: Build seed echoed into the checkpoint

    Returns:
        Tuple[Checkpoint, TrainReport]: Best-validation snapshot (also loaded into net) and curves

    Raises:
        DataError: If either set is empty, or a per-cell BatchNorm would see a batch of one
        NumericError: On a non-finite loss or parameter
    """
    x1, x2, y = as_arrays(train_set)
    val = as_arrays(val_set)
    if len(x1) == 0 or len(val[0]) == 0:
        raise DataError(f"fit needs nonempty sets, got {len(x1)} train and {len(val[0])} val samples")
    _check_batch_statistics(net, len(x1), cfg.batch_size)

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, clip_norm=cfg.grad_clip)
    report = TrainReport()
    best_state = net.state_dict()
    since_best = 0
    started = time.perf_counter()

    for epoch in range(cfg.max_epochs):
        epoch_started = time.perf_counter()
        net.train()
        total, count = 0.0, 0
        for b, idx in enumerate(batches(len(x1), cfg.batch_size, rng)):
            net.zero_grad()
            loss = mae(net(Tensor(x1[idx]), Tensor(x2[idx]), training=True), Tensor(y[idx]))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"Non-finite loss {value} at epoch {epoch}, batch {b}")
            loss.backward()
            optimizer.step()
            _check_finite(net, epoch, b)
            total += value * len(idx)
            count += len(idx)

        val_mae = evaluate(net, val)
        elapsed = time.perf_counter() - epoch_started
        report.epochs.append(
            EpochMetrics(
                epoch=epoch,
                train_mae=total / count,
                val_mae=val_mae,
                wall_seconds=elapsed if cfg.record_wall_time else 0.0,
            )
        )
        _LOGGER.info(f"Epoch {epoch}: train MAE {total / count:.5f}, val MAE {val_mae:.5f} ({elapsed:.2f}s)")

        if val_mae < report.best_val_mae:
            report.best_val_mae = val_mae
            report.best_epoch = epoch
            best_state = net.state_dict()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                report.stopped_early = True
                _LOGGER.info(f"Early stop at epoch {epoch}; best epoch {report.best_epoch}")
                break

    net.load_state_dict(*best_state)
    net.eval()
    report.wall_time = time.perf_counter() - started
    checkpoint = make_checkpoint(
        net,
        train=cfg,
        pipeline=pipeline,
        best_val_mae=report.best_val_mae,
        best_epoch=report.best_epoch,
        seed=seed,
        state=best_state,
    )
    return checkpoint, report


def write_metrics(report: TrainReport, path: str) -> None:
    """Per-epoch CSV: epoch, train_mae, val_mae, wall_seconds"""
    frame = pd.DataFrame([e.model_dump() for e in report.epochs], columns=["epoch", "train_mae", "val_mae", "wall_seconds"])
    frame.to_csv(path, index=False, lineterminator="\n")
