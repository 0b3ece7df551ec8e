"""
Synthetic delayed thermal plant
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .const import GROUND_TRUTH_FILE, MANIFEST_FILE, SERIES_FILE, TEMPERATURE_GROUP, ColumnRole
from .datapipe import TIMESTAMP_FORMAT, SeriesTable, format_timestamp, parse_timestamp
from .models import ColumnSpec, DisturbanceEvent, GroundTruth, Manifest, PipelineConfig, PlantConfig

_LOGGER = logging.getLogger(__name__)

ROOM = "room_temp"
FLUID = "fluid_temp"
OUTSIDE = "outside_temp"
COMMAND = "heater_cmd"
COMMAND_GROUP = "command"


@dataclass
class PlantTrace:
    """Per-step plant signals, before expansion to minute rows"""
    room: np.ndarray
    fluid: np.ndarray
    outside: np.ndarray
    command: np.ndarray
    disturbance: np.ndarray


@dataclass
class Simulation:
    """Emitted series plus the hidden ground truth"""
    table: SeriesTable
    trace: PlantTrace
    ground_truth: GroundTruth


def plant_manifest(pipeline: Optional[PipelineConfig] = None) -> Manifest:
    return Manifest(
        columns=[
            ColumnSpec(name=ROOM, role=ColumnRole.TARGET, group=TEMPERATURE_GROUP),
            ColumnSpec(name=FLUID, role=ColumnRole.FEATURE, group=TEMPERATURE_GROUP),
            ColumnSpec(name=OUTSIDE, role=ColumnRole.FEATURE, group=TEMPERATURE_GROUP),
            ColumnSpec(name=COMMAND, role=ColumnRole.COMMAND, group=COMMAND_GROUP),
        ],
        temperature_group=TEMPERATURE_GROUP,
        pipeline=pipeline or PipelineConfig(),
    )


def command_schedule(rng: np.random.Generator, n_steps: int, hold_min: int, hold_max: int) -> np.ndarray:
    """Random piecewise-constant duty cycle in [0, 1]"""
    command = np.empty(n_steps)
    k = 0
    while k < n_steps:
        hold = int(rng.integers(hold_min, hold_max + 1))
        command[k:k + hold] = rng.uniform(0.0, 1.0)
        k += hold
    return command


def disturbance_events(rng: np.random.Generator, n_steps: int, rate: float, duration: int) -> List[Tuple[int, int]]:
    """Sorted (start, end) step ranges, end exclusive"""
    count = int(rng.poisson(rate * n_steps / 1000.0))
    starts = np.sort(rng.integers(0, n_steps, size=count))
    return [(int(s), int(min(s + duration, n_steps))) for s in starts]


def delayed(signal: np.ndarray, d: int) -> np.ndarray:
    """signal[k - d], zero before the start"""
    if d == 0:
        return signal.copy()
    return np.concatenate([np.zeros(d), signal[:-d]])[: len(signal)]


def run_plant(cfg: PlantConfig, n_steps: int) -> Tuple[PlantTrace, List[Tuple[int, int]]]:
    """Step the plant dynamics

    room(k+1) = room(k) + (outside(k) + gain * cmd(k - d) - room(k)) / tau
                - magnitude * vent(k) * (room(k) - outside(k)) + noise(k)

    Args:
        cfg: Plant configuration
        n_steps: Number of plant steps

    Returns:
        Tuple[PlantTrace, List[Tuple[int, int]]]: Signals and the hidden venting events
    """
    rng = np.random.default_rng(cfg.seed)
    command = command_schedule(rng, n_steps, cfg.command_hold_min, cfg.command_hold_max)
    k = np.arange(n_steps)
    outside = (
        cfg.outside_mean
        + cfg.outside_amplitude * np.sin(2.0 * np.pi * k / cfg.outside_period_steps)
        + rng.normal(0.0, cfg.outside_noise_std, size=n_steps)
    )
    events = disturbance_events(rng, n_steps, cfg.disturbance_rate, cfg.disturbance_duration)
    vent = np.zeros(n_steps)
    for start, end in events:
        vent[start:end] = 1.0
    noise = rng.normal(0.0, cfg.noise_std, size=n_steps)
    return integrate(cfg, command, outside, vent, noise), events


def integrate(cfg: PlantConfig, command: np.ndarray, outside: np.ndarray, vent: np.ndarray, noise: np.ndarray) -> PlantTrace:
    """Deterministic plant update for given exogenous signals"""
    n_steps = len(command)
    drive = delayed(command, cfg.dead_time_steps)
    room = np.empty(n_steps)
    fluid = np.empty(n_steps)
    room[0] = cfg.outside_mean + 0.5 * cfg.gain
    fluid[0] = cfg.fluid_base
    for i in range(n_steps - 1):
        relax = (outside[i] + cfg.gain * drive[i] - room[i]) / cfg.inertia_tau
        venting = -cfg.disturbance_magnitude * vent[i] * (room[i] - outside[i])
        room[i + 1] = room[i] + relax + venting + noise[i]
        fluid[i + 1] = fluid[i] + (cfg.fluid_base + cfg.fluid_gain * command[i] - fluid[i]) / cfg.fluid_tau
    return PlantTrace(room=room, fluid=fluid, outside=outside, command=command, disturbance=vent)


def inject_gaps(rng: np.random.Generator, n_rows: int, rate: float, max_len: int) -> List[Tuple[int, int]]:
    """Missing-row bursts as (start, end) row ranges, end exclusive"""
    count = int(rng.poisson(rate * n_rows / 1000.0))
    gaps = []
    for _ in range(count):
        start = int(rng.integers(0, n_rows))
        length = int(rng.integers(1, max_len + 1))
        gaps.append((start, min(start + length, n_rows)))
    return sorted(gaps)


def simulate(cfg: PlantConfig, n_steps: Optional[int] = None, pipeline: Optional[PipelineConfig] = None) -> Simulation:
    """Generate a minute-resolution series with known dead time

    Each plant step is held for minutes_per_step rows.

    Args:
        cfg: Plant configuration
        n_steps: Plant steps to run (defaults to cfg.n_steps)
        pipeline: Preprocessing constants recorded in the manifest

    Returns:
        Simulation: Series table, per-step trace and ground truth
    """
    n_steps = n_steps or cfg.n_steps
    trace, events = run_plant(cfg, n_steps)
    m = cfg.minutes_per_step
    start = parse_timestamp(cfg.start)
    index = pd.date_range(start, periods=n_steps * m, freq="1min")
    frame = pd.DataFrame(
        {
            ROOM: np.repeat(trace.room, m),
            FLUID: np.repeat(trace.fluid, m),
            OUTSIDE: np.repeat(trace.outside, m),
            COMMAND: np.repeat(trace.command, m),
        },
        index=index,
    )

    gap_rng = np.random.default_rng([cfg.seed, 1])
    gaps = inject_gaps(gap_rng, len(frame), cfg.gap_rate, cfg.max_gap_len_minutes) if cfg.gap_rate > 0 else []
    for a, b in gaps:
        frame.iloc[a:b] = np.nan

    ground_truth = GroundTruth(
        dead_time_steps=cfg.dead_time_steps,
        minutes_per_step=m,
        inertia_tau=cfg.inertia_tau,
        gain=cfg.gain,
        seed=cfg.seed,
        events=[
            DisturbanceEvent(
                start_step=a,
                end_step=b,
                start=format_timestamp(index[a * m]),
                end=format_timestamp(index[b * m - 1]),
            )
            for a, b in events
        ],
        gaps=[(format_timestamp(index[a]), format_timestamp(index[b - 1])) for a, b in gaps],
    )
    _LOGGER.info(
        f"Simulated {n_steps} steps ({len(frame)} rows), dead time {cfg.dead_time_steps}, "
        f"{len(events)} disturbance events, {len(gaps)} gaps"
    )
    return Simulation(table=SeriesTable(frame=frame, manifest=plant_manifest(pipeline)), trace=trace, ground_truth=ground_truth)


def write_simulation(sim: Simulation, out_dir: str) -> None:
    """Write series CSV, manifest and ground-truth sidecar"""
    os.makedirs(out_dir, exist_ok=True)
    frame = sim.table.frame.copy()
    frame.index = frame.index.strftime(TIMESTAMP_FORMAT)
    frame.index.name = "timestamp"
    frame.to_csv(os.path.join(out_dir, SERIES_FILE), na_rep="", lineterminator="\n")
    with open(os.path.join(out_dir, MANIFEST_FILE), "w") as f:
        f.write(sim.table.manifest.model_dump_json(indent=2))
    with open(os.path.join(out_dir, GROUND_TRUTH_FILE), "w") as f:
        f.write(sim.ground_truth.model_dump_json(indent=2))
    _LOGGER.info(f"Wrote simulation to {out_dir}")


def load_ground_truth(path: str) -> Optional[GroundTruth]:
    if not os.path.exists(path):
        return None
    with open(path, "r") as f:
        return GroundTruth.model_validate(json.load(f))
