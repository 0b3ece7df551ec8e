"""
Pydantic models describing series data, prepared samples and plant ground truth
"""
from typing import Dict, List, Tuple

from pydantic import BaseModel, Field, model_validator

from ..const import TEMPERATURE_GROUP, ColumnRole
from .base import PipelineConfig


class ColumnSpec(BaseModel):
    """One series column with its role and normalization group"""
    name: str
    role: ColumnRole
    group: str


class Manifest(BaseModel):
    """Data manifest accompanying a series CSV"""
    columns: List[ColumnSpec]
    temperature_group: str = TEMPERATURE_GROUP
    pipeline: PipelineConfig = PipelineConfig()

    @model_validator(mode="after")
    def check_columns(self) -> "Manifest":
        """Unique names, at least one target and command, targets in the temperature group"""
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"Duplicate column names in manifest: {names}")
        if not self.targets:
            raise ValueError("Manifest needs at least one target column")
        if not self.commands:
            raise ValueError("Manifest needs at least one command column")
        stray = [c.name for c in self.columns if c.role == ColumnRole.TARGET and c.group != self.temperature_group]
        if stray:
            raise ValueError(f"Target columns outside the temperature group: {stray}")
        return self

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.columns]

    @property
    def targets(self) -> List[str]:
        return [c.name for c in self.columns if c.role == ColumnRole.TARGET]

    @property
    def commands(self) -> List[str]:
        return [c.name for c in self.columns if c.role == ColumnRole.COMMAND]

    @property
    def temperature_columns(self) -> List[str]:
        return [c.name for c in self.columns if c.group == self.temperature_group]

    def groups(self) -> Dict[str, List[str]]:
        """Column names per normalization group, in manifest order"""
        out: Dict[str, List[str]] = {}
        for c in self.columns:
            out.setdefault(c.group, []).append(c.name)
        return out


class GroupStats(BaseModel):
    """Mean and standard deviation used to normalize one group"""
    mean: float
    std: float


class SampleMeta(BaseModel):
    """Timestamps and normalization statistics of one prepared sample"""
    start: str
    end: str
    anchor: Dict[str, float]
    group_stats: Dict[str, GroupStats]


class SampleIndex(BaseModel):
    """Index of a prepared sample cache directory"""
    manifest: Manifest
    boundary: str
    train: List[SampleMeta] = []
    val: List[SampleMeta] = []


class DisturbanceEvent(BaseModel):
    """Hidden venting event, in plant steps and in ISO time"""
    start_step: int
    end_step: int
    start: str
    end: str


class GroundTruth(BaseModel):
    """Sidecar written next to simulated series"""
    dead_time_steps: int = Field(ge=0)
    minutes_per_step: int
    inertia_tau: float
    gain: float
    seed: int
    events: List[DisturbanceEvent] = []
    gaps: List[Tuple[str, str]] = []
