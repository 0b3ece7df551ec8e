import numpy as np
import pytest

from delaynet.models import DelayNetConfig, PipelineConfig, PlantConfig
from delaynet.plantsim import simulate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """F=2, S=12, C=1, T=6, Fc=3 network used by the gradient checks"""
    return DelayNetConfig(F=2, S=12, C=1, T=6, Fy=1, Fc=3)


@pytest.fixture
def small_pipeline():
    return PipelineConfig(window_minutes=90, stride_minutes=30, past_steps=20, future_steps=10, max_gap_minutes=20)


@pytest.fixture
def small_plant():
    return PlantConfig(n_steps=1500, seed=3)


@pytest.fixture
def simulation(small_plant, small_pipeline):
    return simulate(small_plant, pipeline=small_pipeline)
