from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.config.hyperparameters import NAV_CONFIG
from app.models.sim_model import Pose
from app.models.world_model import Category


def _split_floats(value):
    if isinstance(value, str):
        return tuple(float(v) for v in value.replace(" ", "").split(",") if v)
    return value


class PolicyWeights(BaseModel):
    """Weights of the learned-value, detector and distance terms of the direction score"""

    lambda1: float = Field(NAV_CONFIG["lambdas"][0], ge=0.0)
    lambda2: float = Field(NAV_CONFIG["lambdas"][1], ge=0.0)
    lambda3: float = Field(NAV_CONFIG["lambdas"][2], ge=0.0)

    class Config:
        frozen = True

    @classmethod
    def of(cls, triple) -> "PolicyWeights":
        l1, l2, l3 = _split_floats(triple)
        return cls(lambda1=l1, lambda2=l2, lambda3=l3)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


class StopConfig(BaseModel):
    """Policy stopping criterion: confident detection within a per-category distance"""

    tau_c: float = Field(NAV_CONFIG["tau_c"], gt=0.0, lt=1.0)
    d_c: Dict[Category, float] = Field(
        default_factory=lambda: {c: NAV_CONFIG["default_d_c"] for c in Category},
        description="Per-category stopping distance in meters",
    )

    @field_validator("d_c", mode="before")
    @classmethod
    def _parse_categories(cls, value):
        if isinstance(value, dict):
            return {Category.parse(k) if not isinstance(k, Category) else k: float(v) for k, v in value.items()}
        return value

    @field_validator("d_c")
    @classmethod
    def _positive(cls, value):
        for category, distance in value.items():
            if not distance > 0:
                raise ValueError(f"d_c for {category.slug} must be positive")
        return value


class NavConfig(BaseModel):
    """Hierarchical policy constants"""

    k_goals: int = Field(NAV_CONFIG["k_goals"], ge=1)
    sector_half_width: float = Field(NAV_CONFIG["sector_half_width_degrees"], ge=0.0, description="Degrees")
    goal_min_radius: float = Field(NAV_CONFIG["goal_min_radius"], gt=0.0)
    goal_max_radius: float = Field(NAV_CONFIG["goal_max_radius"], gt=0.0)
    candidate_distance: float = Field(NAV_CONFIG["candidate_distance"], gt=0.0)
    budget: int = Field(NAV_CONFIG["budget"], ge=1)
    inflation_cells: int = Field(NAV_CONFIG["inflation_cells"], ge=0)
    goal_tolerance: float = Field(NAV_CONFIG["goal_tolerance"], gt=0.0)
    timeout_factor: float = Field(NAV_CONFIG["timeout_factor"], gt=0.0)
    infeasible_factor: float = Field(NAV_CONFIG["infeasible_factor"], gt=1.0)
    detection_gate: float = Field(NAV_CONFIG["detection_gate"], ge=0.0, le=1.0)
    d_c_grid: Tuple[float, ...] = Field(NAV_CONFIG["d_c_grid"])
    calibration_episodes: int = Field(NAV_CONFIG["calibration_episodes"], ge=1)

    parse_grid = field_validator("d_c_grid", mode="before")(_split_floats)


class EpisodeMode(str, Enum):
    ORACLE_STOP = "oracle_stop"
    POLICY_STOP = "policy_stop"
    CALIBRATION = "calibration"  # never stops early; logs every reasoning step


class NavOutcome(str, Enum):
    SUCCESS = "success"
    INFEASIBLE = "infeasible"
    TIMEOUT = "timeout"
    INTERRUPTED = "interrupted"


class TopoNode(BaseModel):
    """Semantic reasoning location with its panorama and direction scores"""

    node_id: int
    pose: Pose
    views: np.ndarray = Field(..., description="(12, OBS_DIM) panorama captured at the node")
    scores: List[float] = Field(default_factory=list, description="Combined score per direction")

    class Config:
        arbitrary_types_allowed = True


class DirectionEntry(BaseModel):
    """Heap entry for one exploration direction of one node"""

    node_id: int
    direction: int = Field(..., ge=0, lt=12)
    score: float
    popped: bool = False

    def heap_key(self) -> Tuple[float, int, int]:
        # highest score first, then lower (node id, direction)
        return (-self.score, self.node_id, self.direction)


class NavResult(BaseModel):
    outcome: NavOutcome
    pose: Pose
    steps: int = 0
    path_length: float = 0.0
    goal: Optional[Tuple[float, float]] = None


class ReasoningRecord(BaseModel):
    """Snapshot at one semantic reasoning step, replayed offline by stop calibration"""

    steps: int
    path_length: float
    true_distance: float
    detections: List[Tuple[float, float]] = Field(default_factory=list, description="(confidence, distance) for the target")


class TrajectoryStep(BaseModel):
    step: int
    x: float
    y: float
    heading: int
    action: str
    event: str = ""


class HeapLogEntry(BaseModel):
    nodes: int
    pops_before: int
    heap_size: int
