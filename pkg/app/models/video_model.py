from typing import Optional, List, Tuple

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, field_validator

from app.config.hyperparameters import VIDEO_CONFIG
from app.exceptions import PrivilegedAccessError


class VideoConfig(BaseModel):
    """Synthetic video tour generation settings"""

    n_traj_per_world: int = Field(VIDEO_CONFIG["n_traj_per_world"], ge=1)
    noise_p: float = Field(VIDEO_CONFIG["noise_p"], ge=0.0, lt=1.0, description="Probability of a random action")
    min_target_distance: float = Field(VIDEO_CONFIG["min_target_distance"], ge=0.0, description="Meters")
    max_steps: int = Field(VIDEO_CONFIG["max_steps"], ge=2)
    stride: int = Field(VIDEO_CONFIG["stride"], ge=1, description="Keep every stride-th frame")
    panoramic: bool = Field(False, description="Record 12-view panoramas instead of single views")
    interaction_frames: int = Field(VIDEO_CONFIG["interaction_frames"], ge=1)
    interaction_episode_length: int = Field(VIDEO_CONFIG["interaction_episode_length"], ge=1)


class Trajectory(BaseModel):
    """One frame sequence; ground truth is kept private and reached through VideoDataset"""

    traj_id: int
    world_id: str = ""
    observations: np.ndarray = Field(..., description="(length, dim) float64 observations")
    actions: Optional[np.ndarray] = Field(None, description="(length-1,) public action labels")

    _true_actions: Optional[np.ndarray] = PrivateAttr(default=None)
    _true_poses: Optional[np.ndarray] = PrivateAttr(default=None)

    class Config:
        arbitrary_types_allowed = True

    @field_validator("observations", mode="before")
    @classmethod
    def _check_observations(cls, value):
        array = np.asarray(value, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] < 2:
            raise ValueError("a trajectory needs at least two frames")
        return array

    @field_validator("actions", mode="before")
    @classmethod
    def _check_actions(cls, value):
        if value is None:
            return None
        return np.asarray(value, dtype=np.int64)

    @classmethod
    def build(
        cls,
        traj_id: int,
        world_id: str,
        observations,
        actions=None,
        true_actions=None,
        true_poses=None,
    ) -> "Trajectory":
        traj = cls(traj_id=traj_id, world_id=world_id, observations=observations, actions=actions)
        if actions is not None and len(traj.actions) != traj.length - 1:
            raise ValueError("action labels must cover every consecutive frame pair")
        if true_actions is not None:
            traj._true_actions = np.asarray(true_actions, dtype=np.int64)
        if true_poses is not None:
            traj._true_poses = np.asarray(true_poses, dtype=np.float64)
        return traj

    @property
    def length(self) -> int:
        return int(self.observations.shape[0])

    @property
    def has_hidden_truth(self) -> bool:
        return self._true_actions is not None or self._true_poses is not None

    def with_actions(self, actions) -> "Trajectory":
        clone = Trajectory.build(self.traj_id, self.world_id, self.observations, actions=actions)
        clone._true_actions = self._true_actions
        clone._true_poses = self._true_poses
        return clone


class VideoDataset(BaseModel):
    """Collection of trajectories with a capability flag guarding hidden ground truth"""

    kind: str = Field("video", description="video | interaction | pseudo")
    trajectories: List[Trajectory] = Field(default_factory=list)
    noise_p: float = 0.0
    seed: int = 0
    stride: int = 1
    config_hash: str = ""

    _privileged: bool = PrivateAttr(default=False)

    class Config:
        arbitrary_types_allowed = True

    @classmethod
    def create(cls, privileged: bool = True, **kwargs) -> "VideoDataset":
        dataset = cls(**kwargs)
        dataset._privileged = privileged
        return dataset

    @property
    def privileged(self) -> bool:
        return self._privileged

    def public_view(self) -> "VideoDataset":
        """Same frames and labels, without access to hidden actions and poses"""
        return self.derive(privileged=False)

    def derive(self, privileged: Optional[bool] = None, **updates) -> "VideoDataset":
        fields = {
            "kind": self.kind,
            "trajectories": self.trajectories,
            "noise_p": self.noise_p,
            "seed": self.seed,
            "stride": self.stride,
            "config_hash": self.config_hash,
        }
        fields.update(updates)
        keep = self._privileged if privileged is None else (self._privileged and privileged)
        return VideoDataset.create(privileged=keep, **fields)

    def _require_privilege(self) -> None:
        if not self._privileged:
            raise PrivilegedAccessError(f"hidden ground truth of {self.kind} dataset requested through a public handle")

    def hidden_actions(self, index: int) -> Optional[np.ndarray]:
        self._require_privilege()
        return self.trajectories[index]._true_actions

    def hidden_poses(self, index: int) -> Optional[np.ndarray]:
        self._require_privilege()
        return self.trajectories[index]._true_poses

    @property
    def obs_dim(self) -> int:
        return int(self.trajectories[0].observations.shape[1]) if self.trajectories else 0

    @property
    def n_frames(self) -> int:
        return sum(t.length for t in self.trajectories)

    @property
    def n_pairs(self) -> int:
        return sum(t.length - 1 for t in self.trajectories)

    @property
    def labeled(self) -> bool:
        return bool(self.trajectories) and all(t.actions is not None for t in self.trajectories)

    def mean_length(self) -> float:
        return float(np.mean([t.length for t in self.trajectories])) if self.trajectories else 0.0

    def frame_pairs(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (o_t, o_t+1, label) arrays; label -1 where the pair is unlabeled"""
        obs, nxt, labels = [], [], []
        for traj in self.trajectories:
            obs.append(traj.observations[:-1])
            nxt.append(traj.observations[1:])
            if traj.actions is None:
                labels.append(np.full(traj.length - 1, -1, dtype=np.int64))
            else:
                labels.append(traj.actions)
        if not obs:
            return np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        return np.vstack(obs), np.vstack(nxt), np.concatenate(labels)
