from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from app.config.hyperparameters import EVAL_CONFIG, BRANCHING_CONFIG, VIDEO_CONFIG
from app.models.navigation_model import (
    PolicyWeights,
    ReasoningRecord,
    TrajectoryStep,
    HeapLogEntry,
)
from app.models.sim_model import Pose
from app.models.world_model import Category


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"

    @classmethod
    def of(cls, distance: float, edges: Tuple[float, float, float] = EVAL_CONFIG["difficulty_edges"]) -> Optional["Difficulty"]:
        """Bucket a shortest-path length; None when outside (0, hard edge]"""
        easy, medium, hard = edges
        if not 0.0 < distance <= hard:
            return None
        if distance <= easy:
            return cls.EASY
        if distance <= medium:
            return cls.MEDIUM
        return cls.HARD


class Episode(BaseModel):
    """ObjectGoal episode: start pose in a test world plus the target category"""

    episode_id: int
    world_index: int
    start: Pose
    category: Category
    shortest_distance: float = Field(..., gt=0.0, le=15.0, description="Geodesic distance l in meters")
    difficulty: Difficulty
    seed: int = 0


class EpisodeResult(BaseModel):
    """Outcome of one episode; path length counts translation only"""

    episode_id: int = 0
    success: bool = False
    path_length: float = Field(0.0, ge=0.0)
    steps: int = 0
    stop_event: str = ""
    final_distance: float = float("inf")
    n_nodes: int = 0
    trajectory: List[TrajectoryStep] = Field(default_factory=list)
    reasoning: List[ReasoningRecord] = Field(default_factory=list)
    heap_log: List[HeapLogEntry] = Field(default_factory=list)


class EvalConfig(BaseModel):
    n_per_class: int = Field(EVAL_CONFIG["n_per_class"], ge=1)
    bootstrap_samples: int = Field(EVAL_CONFIG["bootstrap_samples"], ge=1)
    ci_level: float = Field(EVAL_CONFIG["ci_level"], gt=0.0, lt=1.0)
    max_start_attempts: int = Field(EVAL_CONFIG["max_start_attempts"], ge=1)
    fidelity_poses: int = Field(EVAL_CONFIG["fidelity_poses"], ge=2)
    seed: int = 0


class MethodSpec(BaseModel):
    """Named policy configuration evaluated by the suite"""

    name: str
    weights: PolicyWeights = Field(default_factory=PolicyWeights)
    value_source: Optional[str] = Field(None, description="Key of the value function used for lambda1")
    reactive: bool = Field(False, description="Reactive behavior-cloning policy instead of the hierarchical one")

    class Config:
        frozen = True


class MetricSummary(BaseModel):
    spl: float
    spl_ci: Tuple[float, float]
    sr: float
    sr_ci: Tuple[float, float]
    n: int


class AblationConfig(BaseModel):
    """One pipeline variant; every field feeds exactly one stage"""

    action_source: str = Field("inverse", description="inverse | true")
    detector: str = Field("noisy", description="noisy | perfect")
    reward_source: str = Field("detector", description="detector | pose")
    video_noise_p: float = Field(VIDEO_CONFIG["noise_p"], ge=0.0, lt=1.0)
    sampling_weights: Tuple[float, float, float] = (1.0, 0.0, 1.0)
    panoramic_training: bool = False

    class Config:
        frozen = True

    @field_validator("action_source")
    @classmethod
    def _action_source(cls, value):
        if value not in ("inverse", "true"):
            raise ValueError("action_source must be inverse or true")
        return value

    @field_validator("detector")
    @classmethod
    def _detector(cls, value):
        if value not in ("noisy", "perfect"):
            raise ValueError("detector must be noisy or perfect")
        return value

    @field_validator("reward_source")
    @classmethod
    def _reward_source(cls, value):
        if value not in ("detector", "pose"):
            raise ValueError("reward_source must be detector or pose")
        return value

    def stage_inputs(self) -> Dict[str, Tuple]:
        """Fields read by each pipeline stage"""
        return {
            "videos": (self.video_noise_p, self.panoramic_training),
            "labels": (self.action_source,),
            "rewards": (self.detector, self.reward_source),
            "eval": (self.sampling_weights,),
        }

    def stage_keys(self) -> Dict[str, Tuple]:
        """Cache key of each stage: its own inputs plus everything upstream"""
        keys, acc = {}, ()
        for stage, inputs in self.stage_inputs().items():
            acc = acc + inputs
            keys[stage] = acc
        return keys

    def differing_fields(self, other: "AblationConfig") -> List[str]:
        return [name for name in type(self).model_fields if getattr(self, name) != getattr(other, name)]


class BranchingConfig(BaseModel):
    corridor_len: int = Field(BRANCHING_CONFIG["corridor_len"])
    branch_offset: int = Field(BRANCHING_CONFIG["branch_offset"])
    mix: Tuple[float, float, float] = BRANCHING_CONFIG["mix"]
    n_videos: int = Field(BRANCHING_CONFIG["n_videos"], ge=1)
    n_rollouts: int = Field(BRANCHING_CONFIG["n_rollouts"], ge=1)
    rollout_budget: int = Field(BRANCHING_CONFIG["rollout_budget"], ge=1)
    action_source: str = Field("true", description="true | inverse")
    seed: int = 0

    @field_validator("mix", mode="before")
    @classmethod
    def _parse_mix(cls, value):
        if isinstance(value, str):
            value = tuple(float(v) for v in value.split(","))
        return value

    @field_validator("mix")
    @classmethod
    def _check_mix(cls, value):
        if any(v < 0 for v in value) or abs(sum(value) - 1.0) > 1e-6:
            raise ValueError("mix must be three non-negative fractions summing to 1")
        return value
