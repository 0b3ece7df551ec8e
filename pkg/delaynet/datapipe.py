"""
Series ingestion, gap filling, windowing and per-sample normalization
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
import pytz

from .const import SAMPLE_INDEX_FILE, SubsetKind
from .errors import ConfigurationError, DataError, StateError
from .models import GroundTruth, GroupStats, Manifest, PipelineConfig, SampleIndex, SampleMeta

_LOGGER = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"


@dataclass
class SeriesTable:
    """Minute-resolution series on a complete UTC grid plus its manifest"""
    frame: pd.DataFrame
    manifest: Manifest

    @property
    def index(self) -> pd.DatetimeIndex:
        return self.frame.index


@dataclass
class RawWindow:
    """Gap-free slice of the series, columns in manifest order"""
    start: pd.Timestamp
    end: pd.Timestamp
    values: np.ndarray


@dataclass
class SampleWindow:
    """One normalized training sample"""
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    anchor: Dict[str, float]
    group_stats: Dict[str, GroupStats]
    start: pd.Timestamp
    end: pd.Timestamp
    columns: List[str] = field(default_factory=list)
    targets: List[str] = field(default_factory=list)
    temperature_group: str = "temperature"

    @property
    def anchor_value(self) -> float:
        return next(iter(self.anchor.values())) if self.anchor else 0.0

    def past_raw(self, column: str, manifest: Manifest) -> np.ndarray:
        """Undo normalization of one column of x1"""
        row = self.x1[self.columns.index(column)]
        spec = next(c for c in manifest.columns if c.name == column)
        stats = self.group_stats[spec.group]
        return (row + self.anchor.get(column, 0.0)) * stats.std + stats.mean

    def meta(self) -> SampleMeta:
        return SampleMeta(
            start=format_timestamp(self.start),
            end=format_timestamp(self.end),
            anchor=self.anchor,
            group_stats=self.group_stats,
        )


def format_timestamp(ts: pd.Timestamp) -> str:
    return pd.Timestamp(ts).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(value: str) -> pd.Timestamp:
    """Parse an ISO timestamp as UTC"""
    ts = pd.Timestamp(value)
    return ts.tz_localize(pytz.utc) if ts.tzinfo is None else ts.tz_convert(pytz.utc)


def load_manifest(path: str) -> Manifest:
    """Read a manifest JSON file"""
    with open(path, "r") as f:
        return Manifest.model_validate(json.load(f))


def load_series(csv_path: str, manifest: Manifest) -> SeriesTable:
    """Read a series CSV and reindex it to a complete 1-minute UTC grid

    Args:
        csv_path: CSV with a timestamp first column and one column per series
        manifest: Column roles and groups

    Returns:
        SeriesTable: Frame whose absent rows are NaN

    Raises:
        DataError: On unsorted or duplicate timestamps or missing columns
    """
    frame = pd.read_csv(csv_path)
    if frame.shape[1] < 2:
        raise DataError(f"{csv_path} has no data columns")
    time_col = frame.columns[0]
    index = pd.DatetimeIndex(pd.to_datetime(frame[time_col]))
    index = index.tz_localize(pytz.utc) if index.tz is None else index.tz_convert(pytz.utc)
    frame = frame.drop(columns=[time_col]).set_index(index)
    return to_series_table(frame, manifest)


def to_series_table(frame: pd.DataFrame, manifest: Manifest) -> SeriesTable:
    """Validate a time-indexed frame and reindex it to a 1-minute grid"""
    if not frame.index.is_monotonic_increasing:
        raise DataError("Series timestamps are not sorted")
    if frame.index.has_duplicates:
        raise DataError("Series timestamps contain duplicates")
    missing = [name for name in manifest.names if name not in frame.columns]
    if missing:
        raise DataError(f"Series is missing manifest columns: {missing}")
    frame = frame[manifest.names].astype(np.float64)
    if len(frame) == 0:
        raise DataError("Series is empty")
    grid = pd.date_range(frame.index[0].floor("min"), frame.index[-1].floor("min"), freq="1min")
    absent = len(grid) - len(frame)
    frame = frame.reindex(grid)
    if absent > 0:
        _LOGGER.info(f"{absent} absent minute rows marked missing")
    return SeriesTable(frame=frame, manifest=manifest)


def interpolate_gaps(col: pd.Series, max_gap_minutes: int) -> pd.Series:
    """Linearly fill interior missing runs shorter than max_gap_minutes rows

    Raises:
        DataError: If the index is not sorted
    """
    if not col.index.is_monotonic_increasing:
        raise DataError(f"Series {col.name!r} has unsorted timestamps")
    missing = col.isna()
    if not missing.any():
        return col.copy()
    run_id = (missing != missing.shift()).cumsum()
    run_len = missing.groupby(run_id).transform("size")
    filled = col.interpolate(method="linear", limit_area="inside")
    keep_missing = missing & (run_len >= max_gap_minutes)
    filled[keep_missing] = np.nan
    return filled


def fill_gaps(table: SeriesTable, max_gap_minutes: int) -> SeriesTable:
    frame = table.frame.apply(lambda col: interpolate_gaps(col, max_gap_minutes))
    still = int(frame.isna().any(axis=1).sum())
    if still:
        _LOGGER.info(f"{still} minute rows remain missing after gap interpolation")
    return SeriesTable(frame=frame, manifest=table.manifest)


def make_windows(table: SeriesTable, window_minutes: int, stride_minutes: int) -> List[RawWindow]:
    """Overlapping windows with every window containing a missing value dropped"""
    values = table.frame.to_numpy(dtype=np.float64).T
    n_rows = values.shape[1]
    if window_minutes > n_rows:
        return []
    bad = np.concatenate([[0], np.cumsum(np.isnan(values).any(axis=0))])
    windows: List[RawWindow] = []
    rejected = 0
    for offset in range(0, n_rows - window_minutes + 1, stride_minutes):
        if bad[offset + window_minutes] - bad[offset] > 0:
            rejected += 1
            continue
        windows.append(
            RawWindow(
                start=table.index[offset],
                end=table.index[offset + window_minutes - 1],
                values=values[:, offset:offset + window_minutes].copy(),
            )
        )
    if rejected:
        _LOGGER.warning(f"Rejected {rejected} windows with missing values, kept {len(windows)}")
    return windows


def average_triples(w: np.ndarray, factor: int = 3) -> np.ndarray:
    """Mean of consecutive non-overlapping groups along the last axis"""
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] % factor != 0:
        raise ConfigurationError(f"Window length {w.shape[-1]} is not divisible by {factor}")
    return w.reshape(w.shape[:-1] + (w.shape[-1] // factor, factor)).mean(axis=-1)


def group_normalize(
    w: np.ndarray,
    manifest: Manifest,
    past_steps: int,
    std_floor: float,
) -> Tuple[np.ndarray, Dict[str, GroupStats]]:
    """Standardize each group with statistics of its known past"""
    if w.shape[0] != len(manifest.columns):
        raise ConfigurationError(f"Window has {w.shape[0]} rows, manifest has {len(manifest.columns)} columns")
    out = np.empty_like(w)
    stats: Dict[str, GroupStats] = {}
    names = manifest.names
    for group, members in manifest.groups().items():
        rows = [names.index(m) for m in members]
        if not rows:
            raise ConfigurationError(f"Group {group!r} is empty")
        past = w[rows, :past_steps]
        mean = float(past.mean())
        std = max(float(past.std()), std_floor)
        out[rows] = (w[rows] - mean) / std
        stats[group] = GroupStats(mean=mean, std=std)
    return out, stats


def normalize_sample(
    w: np.ndarray,
    manifest: Manifest,
    pipeline: Optional[PipelineConfig] = None,
    start: Optional[pd.Timestamp] = None,
    end: Optional[pd.Timestamp] = None,
) -> SampleWindow:
    """Group-normalize an averaged window, subtract the target anchor and split it

    Args:
        w: Averaged window [n_columns, S + T] in manifest order
        manifest: Column roles and groups
        pipeline: Preprocessing constants (defaults to the manifest's)
        start: First raw timestamp of the window
        end: Last raw timestamp of the window

    Returns:
        SampleWindow: x1 holds every column over S, x2 the commands over T, y the targets over T
    """
    pipeline = pipeline or manifest.pipeline
    S, T = pipeline.past_steps, pipeline.future_steps
    if w.shape[1] != S + T:
        raise ConfigurationError(f"Averaged window has {w.shape[1]} steps, expected {S + T}")
    names = manifest.names
    normalized, stats = group_normalize(w, manifest, S, pipeline.std_floor)

    target_rows = [names.index(t) for t in manifest.targets]
    anchor_value = float(normalized[target_rows, S - pipeline.anchor_steps:S].mean())
    anchor: Dict[str, float] = {}
    for column in manifest.temperature_columns:
        normalized[names.index(column)] -= anchor_value
        anchor[column] = anchor_value

    command_rows = [names.index(c) for c in manifest.commands]
    return SampleWindow(
        x1=normalized[:, :S].copy(),
        x2=normalized[command_rows, S:].copy(),
        y=normalized[target_rows, S:].copy(),
        anchor=anchor,
        group_stats=stats,
        start=start,
        end=end,
        columns=list(names),
        targets=list(manifest.targets),
        temperature_group=manifest.temperature_group,
    )


def denormalize(pred: np.ndarray, sample: SampleWindow) -> np.ndarray:
    """Map normalized target predictions [Fy, T] back to degrees Celsius

    Raises:
        StateError: If the sample carries no statistics
    """
    stats = sample.group_stats.get(sample.temperature_group)
    if stats is None or not sample.anchor:
        raise StateError("Sample has no normalization statistics to invert")
    return (np.asarray(pred, dtype=np.float64) + sample.anchor_value) * stats.std + stats.mean


def prepare_samples(table: SeriesTable, pipeline: Optional[PipelineConfig] = None) -> List[SampleWindow]:
    """Gap filling, windowing, averaging and normalization in one pass"""
    pipeline = pipeline or table.manifest.pipeline
    table = fill_gaps(table, pipeline.max_gap_minutes)
    samples = []
    for window in make_windows(table, pipeline.window_minutes, pipeline.stride_minutes):
        averaged = average_triples(window.values, pipeline.minutes_per_step)
        samples.append(normalize_sample(averaged, table.manifest, pipeline, window.start, window.end))
    _LOGGER.info(f"Prepared {len(samples)} samples")
    return samples


W = TypeVar("W", RawWindow, SampleWindow)


def split_train_val(windows: Sequence[W], boundary: pd.Timestamp) -> Tuple[List[W], List[W]]:
    """Windows ending before the boundary train, windows starting at or after it validate"""
    boundary = parse_timestamp(boundary) if isinstance(boundary, str) else boundary
    train = [w for w in windows if w.end < boundary]
    val = [w for w in windows if w.start >= boundary]
    dropped = len(windows) - len(train) - len(val)
    if dropped:
        _LOGGER.warning(f"Dropped {dropped} windows straddling {boundary}")
    return train, val


def default_boundary(table: SeriesTable, val_fraction: float) -> pd.Timestamp:
    """Timestamp leaving the last val_fraction of the series for validation"""
    index = table.index
    position = int(round((1.0 - val_fraction) * (len(index) - 1)))
    return index[position]


def stack_samples(samples: Sequence[SampleWindow]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays x1 [N, F, S], x2 [N, C, T], y [N, Fy, T]"""
    if not samples:
        raise DataError("No samples to stack")
    return (
        np.stack([s.x1 for s in samples]),
        np.stack([s.x2 for s in samples]),
        np.stack([s.y for s in samples]),
    )


def select_subset(
    samples: Sequence[SampleWindow],
    kind: SubsetKind,
    manifest: Manifest,
    ground_truth: Optional[GroundTruth] = None,
    cold_column: str = "outside_temp",
    cold_threshold: float = 5.0,
) -> List[SampleWindow]:
    """Filter samples to a validation condition

    Args:
        samples: Candidate samples
        kind: all, cold (mean past value of cold_column below cold_threshold) or quiet (no disturbance overlap)
        manifest: Manifest used to undo normalization
        ground_truth: Plant sidecar, required for quiet
        cold_column: Column defining cold conditions
        cold_threshold: Threshold in raw units

    Returns:
        List[SampleWindow]: Matching samples in input order
    """
    kind = SubsetKind(kind)
    if kind == SubsetKind.ALL:
        return list(samples)
    if kind == SubsetKind.COLD:
        if cold_column not in manifest.names:
            raise ConfigurationError(f"Cold subset column {cold_column!r} is not in the manifest")
        return [s for s in samples if float(s.past_raw(cold_column, manifest).mean()) < cold_threshold]
    if ground_truth is None:
        raise DataError("The quiet subset needs the plant ground truth")
    events = [(parse_timestamp(e.start), parse_timestamp(e.end)) for e in ground_truth.events]
    return [s for s in samples if not any(a <= s.end and s.start <= b for a, b in events)]


def save_samples(
    directory: str,
    train: Sequence[SampleWindow],
    val: Sequence[SampleWindow],
    manifest: Manifest,
    boundary: pd.Timestamp,
) -> SampleIndex:
    """Write x1/x2/y arrays per split as .npy plus a JSON index"""
    os.makedirs(directory, exist_ok=True)
    for split, samples in (("train", train), ("val", val)):
        if samples:
            x1, x2, y = stack_samples(samples)
        else:
            x1 = np.zeros((0, len(manifest.columns), manifest.pipeline.past_steps))
            x2 = np.zeros((0, len(manifest.commands), manifest.pipeline.future_steps))
            y = np.zeros((0, len(manifest.targets), manifest.pipeline.future_steps))
        for name, array in (("x1", x1), ("x2", x2), ("y", y)):
            np.save(os.path.join(directory, f"{split}_{name}.npy"), array, allow_pickle=False)
    index = SampleIndex(
        manifest=manifest,
        boundary=format_timestamp(boundary),
        train=[s.meta() for s in train],
        val=[s.meta() for s in val],
    )
    with open(os.path.join(directory, SAMPLE_INDEX_FILE), "w") as f:
        f.write(index.model_dump_json(indent=2))
    _LOGGER.info(f"Saved {len(train)} train and {len(val)} val samples to {directory}")
    return index


def load_samples(directory: str) -> Tuple[List[SampleWindow], List[SampleWindow], Manifest]:
    """Read a cache written by save_samples

    Raises:
        DataError: If the index or arrays are missing or inconsistent
    """
    index_path = os.path.join(directory, SAMPLE_INDEX_FILE)
    if not os.path.exists(index_path):
        raise DataError(f"No sample index at {index_path}")
    with open(index_path, "r") as f:
        index = SampleIndex.model_validate_json(f.read())
    manifest = index.manifest
    splits = []
    for split, metas in (("train", index.train), ("val", index.val)):
        x1, x2, y = (np.load(os.path.join(directory, f"{split}_{name}.npy")) for name in ("x1", "x2", "y"))
        if not len(x1) == len(x2) == len(y) == len(metas):
            raise DataError(f"Sample cache {directory} is inconsistent for split {split}")
        splits.append(
            [
                SampleWindow(
                    x1=x1[i],
                    x2=x2[i],
                    y=y[i],
                    anchor=dict(meta.anchor),
                    group_stats=dict(meta.group_stats),
                    start=parse_timestamp(meta.start),
                    end=parse_timestamp(meta.end),
                    columns=manifest.names,
                    targets=manifest.targets,
                    temperature_group=manifest.temperature_group,
                )
                for i, meta in enumerate(metas)
            ]
        )
    return splits[0], splits[1], manifest
