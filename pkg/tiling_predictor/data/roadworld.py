"""
Procedural "roadworld" driving scenes with known action dynamics.

The world state is a lateral camera offset, the apparent scale of a lead
vehicle and a global brightness. Each step applies one action
(acceleration, steering, brake):

- steering shifts the whole scene by ``steer_gain * steer`` pixels,
- acceleration multiplies the lead vehicle's size by ``1 + accel_gain * accel``,
- brake sets the next frame's brightness to ``1 - brake_gain * brake``.

Frames are rendered from the state, with Gaussian pixel noise added and
clamped to [0, 1]. The scene is rendered in integer column coordinates
relative to the rounded offset, so a whole-pixel offset change is an exact
image shift.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tiling_predictor.data.driving_log import ACTION_DIM, DrivingLog, make_log
from tiling_predictor.utils.logger import get_logger

logger = get_logger(__name__)


class RoadworldConfig(BaseModel):
    """
    Roadworld generator settings
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, description="Seed for actions and noise")
    n_frames: int = Field(500, ge=1, description="Frames to generate")
    height: int = Field(80, ge=8)
    width: int = Field(160, ge=8)

    # Scene geometry
    horizon_row: int = Field(24, ge=0, description="Row of the vanishing point")
    lane_offsets: Tuple[float, ...] = Field(
        (-150.0, -50.0, 50.0, 150.0), description="Lane marking x offsets at the bottom row, px"
    )
    lane_half_width: float = Field(2.5, gt=0, description="Lane marking half width at the bottom row, px")
    lead_width: float = Field(28.0, gt=0, description="Lead vehicle width at scale 1, px")
    lead_height: float = Field(16.0, gt=0, description="Lead vehicle height at scale 1, px")
    lead_bottom_row: int = Field(58, ge=0, description="Row of the lead vehicle's lower edge")
    lead_dx: float = Field(0.0, description="Lead vehicle x offset from the road centre, px")
    min_scale: float = Field(0.5, gt=0)
    max_scale: float = Field(2.0, gt=0)
    max_offset: float = Field(40.0, ge=0, description="Bound on the lateral camera offset, px")

    # Intensities
    sky_level: float = Field(0.75, ge=0, le=1)
    road_level: float = Field(0.35, ge=0, le=1)
    lane_level: float = Field(0.9, ge=0, le=1)
    vehicle_level: float = Field(0.1, ge=0, le=1)

    # Dynamics gains
    steer_gain: float = Field(2.0, description="Lateral pixel shift per unit steering")
    accel_gain: float = Field(0.05, description="Relative scale change per unit acceleration")
    brake_gain: float = Field(0.3, ge=0, le=1, description="Darkening per unit brake")

    # Observation noise
    noise: float = Field(0.01, ge=0, description="Std of Gaussian pixel noise")

    # Action process (smooth random walk with mild centering)
    action_smoothing: float = Field(0.8, ge=0, lt=1)
    steer_std: float = Field(0.5, ge=0)
    accel_std: float = Field(0.5, ge=0)
    brake_std: float = Field(0.2, ge=0)
    max_steer: float = Field(2.0, gt=0)
    max_accel: float = Field(3.0, gt=0)
    steer_centering: float = Field(0.02, ge=0)
    scale_centering: float = Field(2.0, ge=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "RoadworldConfig":
        if self.min_scale > self.max_scale:
            raise ValueError("min_scale must not exceed max_scale")
        if self.horizon_row >= self.height - 1:
            raise ValueError("horizon_row must lie above the bottom row")
        return self


@dataclass(frozen=True)
class RoadworldState:
    """Lateral offset (px), lead-vehicle scale and global brightness."""
    offset: float = 0.0
    scale: float = 1.0
    brightness: float = 1.0


@dataclass(frozen=True)
class RoadworldRollout:
    """A generated log together with the world state behind every frame."""
    log: DrivingLog
    states: List[RoadworldState]


def roadworld_successor(config: RoadworldConfig, state: RoadworldState, action) -> RoadworldState:
    """
    Apply one raw action to a world state.

    Args:
        config: Generator settings.
        state: Current state.
        action: ``(acceleration, steering, brake)`` in raw units.

    Returns:
        The next state.
    """
    accel, steer, brake = (float(a) for a in np.asarray(action, dtype=np.float64).reshape(ACTION_DIM))
    offset = float(np.clip(state.offset + config.steer_gain * steer, -config.max_offset, config.max_offset))
    scale = float(np.clip(state.scale * (1.0 + config.accel_gain * accel), config.min_scale, config.max_scale))
    brightness = float(np.clip(1.0 - config.brake_gain * brake, 0.0, 1.0))
    return RoadworldState(offset=offset, scale=scale, brightness=brightness)


def render_state(config: RoadworldConfig, state: RoadworldState) -> np.ndarray:
    """
    Render the noise-free frame of a state.

    Returns:
        ``[H,W,1]`` float32 frame in [0, 1].
    """
    height, width = config.height, config.width
    rows = np.arange(height)[:, np.newaxis]
    # integer column coordinate relative to the vanishing point
    d = np.arange(width)[np.newaxis, :] - (width // 2 + int(np.round(state.offset)))

    image = np.full((height, width), config.sky_level, dtype=np.float64)
    below = np.broadcast_to(rows > config.horizon_row, (height, width))
    image[below] = config.road_level

    depth = (rows - config.horizon_row) / float(height - 1 - config.horizon_row)
    half_width = np.maximum(config.lane_half_width * depth, 0.5)
    for lane in config.lane_offsets:
        marking = below & (np.abs(d - depth * lane) <= half_width)
        image[marking] = config.lane_level

    lead_w = config.lead_width * state.scale
    lead_h = config.lead_height * state.scale
    left = config.lead_dx - lead_w / 2.0
    vehicle = (
        (d >= left) & (d < left + lead_w)
        & (rows <= config.lead_bottom_row) & (rows > config.lead_bottom_row - lead_h)
    )
    image[vehicle] = config.vehicle_level

    image *= state.brightness
    return np.clip(image, 0.0, 1.0).astype(np.float32)[..., np.newaxis]


def _policy_actions(config: RoadworldConfig, rng: np.random.Generator, previous: np.ndarray,
                    state: RoadworldState) -> np.ndarray:
    rho = config.action_smoothing
    noise = rng.standard_normal(ACTION_DIM)
    accel = rho * previous[0] + config.accel_std * noise[0] - config.scale_centering * (state.scale - 1.0)
    steer = rho * previous[1] + config.steer_std * noise[1] - config.steer_centering * state.offset
    brake = rho * previous[2] + config.brake_std * noise[2]
    return np.array([
        np.clip(accel, -config.max_accel, config.max_accel),
        np.clip(steer, -config.max_steer, config.max_steer),
        np.clip(brake, 0.0, 1.0),
    ])


def simulate_roadworld(config: RoadworldConfig, actions: Optional[np.ndarray] = None,
                       name: str = "roadworld") -> RoadworldRollout:
    """
    Generate frames, actions and the underlying world states.

    Args:
        config: Generator settings.
        actions: Optional ``[n_frames-1, 3]`` raw actions replacing the
            seeded random walk.
        name: Log name.

    Returns:
        Rollout with a log of ``n_frames`` frames and ``n_frames - 1`` actions.
    """
    n_steps = config.n_frames - 1
    action_rng = np.random.default_rng([config.seed, 0])
    noise_rng = np.random.default_rng([config.seed, 1])
    if actions is not None:
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, ACTION_DIM)
        if actions.shape[0] != n_steps:
            raise ValueError(f"expected {n_steps} actions for {config.n_frames} frames, got {actions.shape[0]}")

    state = RoadworldState()
    states = [state]
    taken = np.zeros((n_steps, ACTION_DIM), dtype=np.float32)
    previous = np.zeros(ACTION_DIM)
    for i in range(n_steps):
        action = actions[i] if actions is not None else _policy_actions(config, action_rng, previous, state)
        # stored actions are what the dynamics see
        taken[i] = action
        state = roadworld_successor(config, state, taken[i])
        states.append(state)
        previous = np.asarray(action, dtype=np.float64)

    frames = np.empty((config.n_frames, config.height, config.width, 1), dtype=np.float32)
    for i, s in enumerate(states):
        frame = render_state(config, s)
        if config.noise > 0:
            frame = np.clip(frame + config.noise * noise_rng.standard_normal(frame.shape), 0.0, 1.0)
        frames[i] = frame

    log = make_log(frames, taken, name=name)
    logger.info("generated roadworld", seed=config.seed, frames=config.n_frames, noise=config.noise)
    return RoadworldRollout(log=log, states=states)


def generate_roadworld(config: RoadworldConfig, name: str = "roadworld") -> DrivingLog:
    """Generate a seeded synthetic driving log."""
    return simulate_roadworld(config, name=name).log
