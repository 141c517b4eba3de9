"""
Shared fixtures: downscaled model configs and seeded roadworld logs.
"""

import numpy as np
import pytest

from tiling_predictor.data.roadworld import RoadworldConfig, simulate_roadworld
from tiling_predictor.data.windows import WindowDataset, compute_stats
from tiling_predictor.models.configs import make_config
from tiling_predictor.models.zoo import build_model

SMALL_FRAME = {"input_height": 16, "input_width": 32}


def small_world(**overrides) -> RoadworldConfig:
    values = dict(
        height=16, width=32, horizon_row=5, lane_offsets=(-30.0, -10.0, 10.0, 30.0),
        lane_half_width=1.0, lead_width=8.0, lead_height=4.0, lead_bottom_row=12,
        max_offset=8.0, n_frames=40, noise=0.0,
    )
    values.update(overrides)
    return RoadworldConfig(**values)


@pytest.fixture
def tiling_config():
    return make_config("sdf-tiling", window=2, encoder_channels=(4, 4, 4), decoder_channels=(4, 4, 4),
                       **SMALL_FRAME)


@pytest.fixture
def tiling_model(tiling_config):
    return build_model("sdf-tiling", tiling_config, seed=3)


@pytest.fixture
def vector_model():
    config = make_config("sdf", window=2, encoder_channels=(4, 4, 4), hidden_width=16,
                         decoder_channels=(4, 4), **SMALL_FRAME)
    return build_model("sdf", config, seed=5)


@pytest.fixture
def world_config():
    return small_world()


@pytest.fixture
def world_log(world_config):
    return simulate_roadworld(world_config).log


@pytest.fixture
def world_dataset(world_log):
    return WindowDataset([world_log], window=2, stats=compute_stats([world_log]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_world():
    """Factory for small noise-free roadworld configs."""
    return small_world
