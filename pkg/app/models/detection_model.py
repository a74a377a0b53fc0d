from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.config.hyperparameters import DETECTOR_CONFIG
from app.models.world_model import Category, N_CATEGORIES


class DetectorConfig(BaseModel):
    """Noise model of the simulated object detector"""

    p_false_neg: float = Field(DETECTOR_CONFIG["p_false_neg"], ge=0.0, lt=1.0)
    p_false_pos: float = Field(DETECTOR_CONFIG["p_false_pos"], ge=0.0, lt=1.0)
    confidence_noise_sigma: float = Field(DETECTOR_CONFIG["confidence_noise_sigma"], ge=0.0)
    seed: int = 0


class Detection(BaseModel):
    category: Category
    confidence: float = Field(..., ge=0.0, le=1.0)
    est_distance: float = Field(..., gt=0.0, description="Median depth of the hitting rays, meters")

    class Config:
        frozen = True


class QuadrupleSet(BaseModel):
    """Transition quadruples (o_t, a_t, o_t+1, r_t+1) stored column-wise"""

    obs: np.ndarray = Field(..., description="(N, dim) observations o_t")
    actions: np.ndarray = Field(..., description="(N,) action codes, -1 when unlabeled")
    next_obs: np.ndarray = Field(..., description="(N, dim) observations o_t+1")
    rewards: np.ndarray = Field(..., description="(N, 5) binary rewards of the next frame")
    traj_ids: Optional[np.ndarray] = Field(None, description="(N,) source trajectory")
    frame_idx: Optional[np.ndarray] = Field(None, description="(N,) index t inside the trajectory")
    config_hash: str = ""

    class Config:
        arbitrary_types_allowed = True

    @field_validator("obs", "next_obs", "rewards", mode="before")
    @classmethod
    def _as_float(cls, value):
        return np.atleast_2d(np.asarray(value, dtype=np.float64))

    @field_validator("actions", "traj_ids", "frame_idx", mode="before")
    @classmethod
    def _as_int(cls, value):
        if value is None:
            return None
        return np.asarray(value, dtype=np.int64).reshape(-1)

    def model_post_init(self, __context) -> None:
        n = len(self.actions)
        if self.obs.shape[0] != n or self.next_obs.shape[0] != n or self.rewards.shape[0] != n:
            raise ValueError("quadruple columns must have equal length")
        if n and self.rewards.shape[1] != N_CATEGORIES:
            raise ValueError(f"rewards need {N_CATEGORIES} columns")

    def __len__(self) -> int:
        return int(len(self.actions))

    @property
    def obs_dim(self) -> int:
        return int(self.obs.shape[1])

    @property
    def labeled(self) -> bool:
        return bool(len(self)) and bool(np.all(self.actions >= 0))

    def subset(self, index: np.ndarray) -> "QuadrupleSet":
        return QuadrupleSet(
            obs=self.obs[index],
            actions=self.actions[index],
            next_obs=self.next_obs[index],
            rewards=self.rewards[index],
            traj_ids=None if self.traj_ids is None else self.traj_ids[index],
            frame_idx=None if self.frame_idx is None else self.frame_idx[index],
            config_hash=self.config_hash,
        )
