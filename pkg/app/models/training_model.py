from typing import Tuple, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.config.hyperparameters import INVERSE_CONFIG, QLEARN_CONFIG


def _split_sizes(value):
    if isinstance(value, str):
        return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
    return value


class InverseTrainConfig(BaseModel):
    """Inverse-model training settings"""

    hidden_sizes: Tuple[int, ...] = Field(INVERSE_CONFIG["hidden_sizes"])
    epochs: int = Field(INVERSE_CONFIG["epochs"], ge=1)
    batch_size: int = Field(INVERSE_CONFIG["batch_size"], ge=1)
    learning_rate: float = Field(INVERSE_CONFIG["learning_rate"], gt=0.0)
    val_fraction: float = Field(INVERSE_CONFIG["val_fraction"], gt=0.0, lt=1.0)
    min_transitions: int = Field(INVERSE_CONFIG["min_transitions"], ge=1)
    seed: int = 0

    parse_hidden_sizes = field_validator("hidden_sizes", mode="before")(_split_sizes)


class QTrainConfig(BaseModel):
    """Double-DQN training settings"""

    gamma: float = Field(QLEARN_CONFIG["gamma"], gt=0.0, lt=1.0)
    batch_size: int = Field(QLEARN_CONFIG["batch_size"], ge=1)
    iterations: int = Field(QLEARN_CONFIG["iterations"], ge=0)
    sync_period: int = Field(QLEARN_CONFIG["sync_period"], ge=1)
    hidden_sizes: Tuple[int, ...] = Field(QLEARN_CONFIG["hidden_sizes"])
    learning_rate: float = Field(QLEARN_CONFIG["learning_rate"], gt=0.0)
    holdout_fraction: float = Field(QLEARN_CONFIG["holdout_fraction"], ge=0.0, lt=1.0)
    tabular: bool = Field(False, description="One table row per distinct observation instead of a network")
    tabular_alpha: float = Field(1.0, gt=0.0, le=1.0)
    tabular_tolerance: float = Field(QLEARN_CONFIG["tabular_tolerance"], ge=0.0)
    tabular_max_sweeps: int = Field(QLEARN_CONFIG["tabular_max_sweeps"], ge=1)
    seed: int = 0

    parse_hidden_sizes = field_validator("hidden_sizes", mode="before")(_split_sizes)


class ValueTrainConfig(BaseModel):
    """Policy-evaluation (TD(0) / Monte Carlo) and strong-supervision settings"""

    gamma: float = Field(QLEARN_CONFIG["gamma"], gt=0.0, lt=1.0)
    alpha: float = Field(QLEARN_CONFIG["td_alpha"], gt=0.0, le=1.0)
    passes: int = Field(QLEARN_CONFIG["td_passes"], ge=1)
    tabular: bool = False
    hidden_sizes: Tuple[int, ...] = Field(QLEARN_CONFIG["value_hidden_sizes"])
    iterations: int = Field(20000, ge=0, description="Network updates for the function-approximation variants")
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    strong_samples: int = Field(QLEARN_CONFIG["strong_samples"], ge=1)
    seed: int = 0

    parse_hidden_sizes = field_validator("hidden_sizes", mode="before")(_split_sizes)


class BCTrainConfig(BaseModel):
    """Behavior cloning from pseudo-labeled suffixes"""

    hidden_sizes: Tuple[int, ...] = Field(QLEARN_CONFIG["bc_hidden_sizes"])
    suffix_length: int = Field(QLEARN_CONFIG["bc_suffix_length"], ge=1)
    epochs: int = Field(QLEARN_CONFIG["bc_epochs"], ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    seed: int = 0

    parse_hidden_sizes = field_validator("hidden_sizes", mode="before")(_split_sizes)


class SupervisionSet(BaseModel):
    """Observations paired with ground-truth Q targets (3 actions x 5 categories)"""

    obs: np.ndarray
    targets: np.ndarray = Field(..., description="(N, 15) targets indexed action * 5 + category")

    class Config:
        arbitrary_types_allowed = True

    def __len__(self) -> int:
        return int(self.obs.shape[0])


class TrainingCurve(BaseModel):
    """Held-out Bellman residual after each target sync"""

    iterations: list[int] = Field(default_factory=list)
    residuals: list[float] = Field(default_factory=list)
    final_loss: Optional[float] = None

    def append(self, iteration: int, residual: float) -> None:
        self.iterations.append(int(iteration))
        self.residuals.append(float(residual))
