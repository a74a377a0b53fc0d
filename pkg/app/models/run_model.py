from typing import Dict, List, Optional, Any
import hashlib
import json

from pydantic import BaseModel, Field

from app.config.hyperparameters import SPLIT_CONFIG


class SplitConfig(BaseModel):
    """How many worlds each split of the pipeline uses"""

    n_train_worlds: int = Field(SPLIT_CONFIG["n_train_worlds"], ge=1, description="Interaction data and stop calibration")
    n_video_worlds: int = Field(SPLIT_CONFIG["n_video_worlds"], ge=1, description="Synthetic video tours")
    n_test_worlds: int = Field(SPLIT_CONFIG["n_test_worlds"], ge=1, description="Held-out evaluation worlds")


class RunConfig(BaseModel):
    """Seed, artifact directory and per-stage overrides of one pipeline run"""

    seed: int = 7
    work_dir: str = "artifacts"
    jobs: int = Field(1, ge=1)
    overrides: Dict[str, Dict[str, str]] = Field(default_factory=dict, description="stage -> field -> raw value")

    def config_hash(self) -> str:
        """First 12 hex digits of SHA-256 over seed and overrides; jobs and paths are excluded"""
        canonical = json.dumps({"seed": self.seed, "overrides": self.overrides}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def stage(self, name: str, model_cls, **extra):
        """Instantiate a stage config; keyword values are run-level defaults that the stage overrides replace"""
        values: Dict[str, Any] = dict(extra)
        values.update(self.overrides.get(name, {}))
        return model_cls(**values)


class ValuePredictRequest(BaseModel):
    model: str = Field("q.txt", description="Model file inside the work directory")
    observation: List[float] = Field(..., description="Egocentric observation vector")


class ValuePredictResponse(BaseModel):
    model: str
    values: Dict[str, float] = Field(..., description="Value per category")
    q_values: Optional[List[List[float]]] = Field(None, description="3 x 5 action-category Q matrix")
    metadata: Optional[Dict[str, Any]] = None


class ReportResponse(BaseModel):
    name: str
    entries: Dict[str, str]
    count: int
