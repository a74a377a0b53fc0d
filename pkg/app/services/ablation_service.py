"""Ablations: one pipeline field changed at a time, with every stage cached on its upstream inputs"""
import logging
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd

from app.models.detection_model import DetectorConfig, QuadrupleSet
from app.models.evaluation_model import AblationConfig, EvalConfig, MethodSpec
from app.models.navigation_model import EpisodeMode, NavConfig, PolicyWeights
from app.models.video_model import VideoConfig, VideoDataset
from app.services import detector_service, evaluation_service, inverse_service, valuelearn_service, video_service
from app.services.pipeline_service import Workspace, load_inverse, load_split, load_stop, q_config, evaluation_episodes

logger = logging.getLogger(__name__)

STAGES = ("videos", "labels", "rewards", "q", "eval")

ABLATIONS: Dict[str, Dict[str, Any]] = {
    "true_actions": {"action_source": "true"},
    "perfect_detector": {"detector": "perfect"},
    "pose_rewards": {"reward_source": "pose"},
    "noise_free_videos": {"video_noise_p": 0.0},
    "detector_in_sampling": {"sampling_weights": (1.0, 1.0, 1.0)},
    "panoramic_training": {"panoramic_training": True},
}

# (config hash, stage key) -> artifact, per stage
_cache: Dict[str, Dict[Tuple, Any]] = {stage: {} for stage in STAGES}


def _cached(stage: str, key: Tuple, build: Callable[[], Any]) -> Any:
    entries = _cache[stage]
    if key in entries:
        logger.info(f"Reusing cached {stage} stage")
        return entries[key]
    value = build()
    entries[key] = value
    return value


def clear_cache() -> None:
    for entries in _cache.values():
        entries.clear()


def ablation_variants(base: Optional[AblationConfig] = None) -> Dict[str, AblationConfig]:
    base = base or AblationConfig()
    variants = {"base": base}
    for name, update in ABLATIONS.items():
        variants[name] = AblationConfig(**{**base.model_dump(), **update})
    return variants


def changed_stage(variant: AblationConfig, base: AblationConfig) -> str:
    """Earliest stage whose cache key differs from the base configuration"""
    variant_keys, base_keys = variant.stage_keys(), base.stage_keys()
    for stage in variant_keys:
        if variant_keys[stage] != base_keys[stage]:
            return stage
    return "-"


class AblationRunner:
    """Runs pipeline variants against a shared workspace; the inverse model and test episodes are fixed"""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.video_worlds, self.video_ids = load_split(ws, "video")
        self.worlds_by_id = dict(zip(self.video_ids, self.video_worlds))
        self.test_worlds, self.episodes = evaluation_episodes(ws)
        self.video_cfg = ws.stage("video", VideoConfig)
        self.detector_cfg = ws.stage("detector", DetectorConfig, seed=ws.run.seed)
        self.nav_cfg = ws.stage("nav", NavConfig)
        self.stop_cfg = load_stop(ws)
        self._inverse = None

    def _key(self, cfg: AblationConfig, stage: str) -> Tuple:
        keys = cfg.stage_keys()
        return (self.ws.config_hash, keys["rewards"] if stage == "q" else keys[stage])

    def inverse(self) -> inverse_service.InverseModel:
        if self._inverse is None:
            self._inverse = load_inverse(self.ws)
        return self._inverse

    def videos(self, cfg: AblationConfig) -> VideoDataset:
        video_cfg = self.video_cfg.model_copy(update={"noise_p": cfg.video_noise_p, "panoramic": cfg.panoramic_training})
        return _cached("videos", self._key(cfg, "videos"), lambda: video_service.generate_videos(
            self.video_worlds, video_cfg, self.ws.run.seed, self.video_ids, self.ws.run.jobs, self.ws.config_hash,
        ))

    def labels(self, cfg: AblationConfig) -> VideoDataset:
        def build():
            videos = self.videos(cfg)
            if cfg.action_source == "true":
                return inverse_service.with_true_labels(videos)
            return inverse_service.pseudo_label(self.inverse(), videos)

        return _cached("labels", self._key(cfg, "labels"), build)

    def rewards(self, cfg: AblationConfig) -> QuadrupleSet:
        def build():
            labeled = self.labels(cfg)
            if cfg.reward_source == "pose":
                return detector_service.true_reward_label(labeled, self.worlds_by_id, self.ws.config_hash)
            detector = detector_service.perfect_detector(self.ws.run.seed) if cfg.detector == "perfect" else self.detector_cfg
            return detector_service.label_rewards(labeled, detector, jobs=self.ws.run.jobs, config_hash=self.ws.config_hash)

        return _cached("rewards", self._key(cfg, "rewards"), build)

    def q(self, cfg: AblationConfig):
        return _cached("q", self._key(cfg, "q"), lambda: valuelearn_service.train_q(self.rewards(cfg), q_config(self.ws)))

    def evaluate(self, name: str, cfg: AblationConfig) -> pd.DataFrame:
        def build():
            method = MethodSpec(name=name, weights=PolicyWeights.of(cfg.sampling_weights), value_source="q")
            return evaluation_service.run_suite(
                [method], self.episodes, self.test_worlds, {"q": self.q(cfg)}, EpisodeMode.ORACLE_STOP,
                self.stop_cfg, self.nav_cfg, self.detector_cfg, self.ws.run.jobs,
            )

        frame = _cached("eval", self._key(cfg, "eval"), build)
        return frame.assign(method=name)


def run_ablations(ws: Workspace, base: Optional[AblationConfig] = None, names: Optional[List[str]] = None) -> Tuple[Dict[str, str], str]:
    """Oracle-Stop SPL/SR of the base pipeline and each single-field variant"""
    variants = ablation_variants(base)
    if names is not None:
        variants = {name: cfg for name, cfg in variants.items() if name == "base" or name in names}
    eval_cfg = ws.stage("eval", EvalConfig, seed=ws.run.seed)
    runner = AblationRunner(ws)

    entries: Dict[str, str] = {}
    rows = []
    for name, cfg in variants.items():
        logger.info(f"Ablation {name}: {', '.join(cfg.differing_fields(variants['base'])) or 'base configuration'}")
        frame = runner.evaluate(name, cfg)
        summary = evaluation_service.summarize(frame, eval_cfg)
        stage = changed_stage(cfg, variants["base"])
        entries[f"ablation.{name}.spl"] = f"{summary.spl:.4f}"
        entries[f"ablation.{name}.spl_ci_lo"] = f"{summary.spl_ci[0]:.4f}"
        entries[f"ablation.{name}.spl_ci_hi"] = f"{summary.spl_ci[1]:.4f}"
        entries[f"ablation.{name}.sr"] = f"{summary.sr:.4f}"
        entries[f"ablation.{name}.changed_stage"] = stage
        rows.append({"ablation": name, "changed": stage, "SPL": summary.spl, "SR": summary.sr})
    table = pd.DataFrame(rows).to_string(index=False, float_format=lambda v: f"{v:.3f}")
    return entries, table
