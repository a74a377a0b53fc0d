from enum import IntEnum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.config.hyperparameters import SENSOR_CONFIG

N_RAYS = SENSOR_CONFIG["n_rays"]
N_SEMANTIC = 6  # five categories plus "none"
RAY_FEATURES = 1 + N_SEMANTIC
OBS_DIM = N_RAYS * RAY_FEATURES
N_HEADINGS = SENSOR_CONFIG["n_headings"]
TURN_DEGREES = SENSOR_CONFIG["turn_degrees"]
NONE_CLASS = N_SEMANTIC - 1


class Action(IntEnum):
    FORWARD = 0
    LEFT = 1
    RIGHT = 2
    STOP = 3


MOVE_ACTIONS: Tuple[Action, ...] = (Action.FORWARD, Action.LEFT, Action.RIGHT)
N_MOVE_ACTIONS = len(MOVE_ACTIONS)


class Pose(BaseModel):
    """Continuous position with a discrete heading (degrees, clockwise in grid coordinates)"""

    x: float = Field(..., description="Meters along columns")
    y: float = Field(..., description="Meters along rows")
    heading: int = Field(0, description="Degrees, multiple of 30 in [0, 360)")

    class Config:
        frozen = True

    @field_validator("heading")
    @classmethod
    def _check_heading(cls, value):
        if value % TURN_DEGREES != 0 or not 0 <= value < 360:
            raise ValueError(f"heading must be a multiple of {TURN_DEGREES} in [0, 360), got {value}")
        return value

    @property
    def heading_index(self) -> int:
        return self.heading // TURN_DEGREES

    def rotated(self, degrees: int) -> "Pose":
        return Pose(x=self.x, y=self.y, heading=(self.heading + degrees) % 360)


class Panorama(BaseModel):
    """Twelve egocentric observations at headings h, h+30, ..., h+330"""

    pose: Pose
    views: np.ndarray = Field(..., description="(12, OBS_DIM) array of observations")

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    @field_validator("views", mode="before")
    @classmethod
    def _check_views(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.shape != (N_HEADINGS, OBS_DIM):
            raise ValueError(f"panorama views must have shape {(N_HEADINGS, OBS_DIM)}, got {array.shape}")
        return array
