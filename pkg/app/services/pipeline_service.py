"""Artifact-backed pipeline stages shared by the command line, the ablation runner and the API"""
import glob
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from app.exceptions import HashMismatch, InvalidParams, IoFailure
from app.models.detection_model import DetectorConfig, QuadrupleSet
from app.models.evaluation_model import BranchingConfig, EvalConfig, Episode
from app.models.navigation_model import EpisodeMode, NavConfig, PolicyWeights, StopConfig
from app.models.run_model import RunConfig, SplitConfig
from app.models.training_model import BCTrainConfig, InverseTrainConfig, QTrainConfig, ValueTrainConfig
from app.models.video_model import VideoConfig, VideoDataset
from app.models.world_model import Category, GridWorld, N_CATEGORIES, WorldParams
from app.services import (
    detector_service,
    evaluation_service,
    inverse_service,
    navigation_service,
    valuelearn_service,
    video_service,
    world_service,
)
from app.services.artifact_service import write_report

logger = logging.getLogger(__name__)

SPLIT_CODES = {"train": 0, "video": 1, "test": 2}
BASELINE_KINDS = ("td0", "mc", "bc", "strong", "strong_vlv")
ORDERING_PAIRS = (
    ("VLV", "DetectionSeeker"),
    ("DetectionSeeker", "TopologicalExploration"),
    ("VLV", "TopologicalExploration"),
    ("VLV", "BC"),
)


STAGE_MODELS = {
    "world": WorldParams,
    "split": SplitConfig,
    "video": VideoConfig,
    "inverse": InverseTrainConfig,
    "detector": DetectorConfig,
    "qlearn": QTrainConfig,
    "value": ValueTrainConfig,
    "bc": BCTrainConfig,
    "nav": NavConfig,
    "eval": EvalConfig,
    "branching": BranchingConfig,
}


def validate_overrides(run: RunConfig) -> None:
    """Unknown stages or fields are rejected; values are checked by instantiating each stage config"""
    for stage, fields in run.overrides.items():
        model_cls = STAGE_MODELS.get(stage)
        if model_cls is None:
            raise InvalidParams(f"unknown config stage {stage!r}; expected one of {', '.join(STAGE_MODELS)}")
        unknown = sorted(set(fields) - set(model_cls.model_fields))
        if unknown:
            raise InvalidParams(f"unknown {stage} fields: {', '.join(unknown)}")
        run.stage(stage, model_cls)


def world_seed(seed: int, split: str, index: int) -> int:
    return int(np.random.SeedSequence([seed, SPLIT_CODES[split], index]).generate_state(1)[0])


class Workspace:
    """Artifact paths of one run plus the config-hash policy (strict inside `pipeline`, warn elsewhere)"""

    def __init__(self, run: RunConfig, strict: bool = False):
        self.run = run
        self.strict = strict
        self.config_hash = run.config_hash()

    def path(self, *parts: str) -> str:
        return os.path.join(self.run.work_dir, *parts)

    def require(self, name: str) -> str:
        path = self.path(name)
        if not os.path.exists(path):
            raise IoFailure(f"missing artifact {path}")
        return path

    def check_hash(self, found: str, path: str) -> None:
        if found == self.config_hash:
            return
        message = f"{path} was written under config {found or '<none>'}, this run is {self.config_hash}"
        if self.strict:
            raise HashMismatch(message)
        logger.warning(message)

    def stage(self, name: str, model_cls, **extra):
        return self.run.stage(name, model_cls, **extra)


# ---------------------------------------------------------------------------
# Worlds
# ---------------------------------------------------------------------------

def gen_worlds(ws: Workspace) -> Dict[str, List[str]]:
    params = ws.stage("world", WorldParams)
    split = ws.stage("split", SplitConfig)
    counts = {"train": split.n_train_worlds, "video": split.n_video_worlds, "test": split.n_test_worlds}
    tasks = [(name, i) for name, n in counts.items() for i in range(n)]

    def build(task: Tuple[str, int]) -> str:
        name, i = task
        world = world_service.generate_world(world_seed(ws.run.seed, name, i), params)
        path = ws.path("worlds", f"{name}_{i:03d}.txt")
        world_service.save_world(world, path, ws.config_hash)
        return path

    with ThreadPoolExecutor(max_workers=ws.run.jobs) as pool:
        paths = list(pool.map(build, tasks))
    logger.info(f"Generated {len(paths)} worlds under {ws.path('worlds')}")
    return {name: [p for (n, _), p in zip(tasks, paths) if n == name] for name in counts}


def load_split(ws: Workspace, split: str) -> Tuple[List[GridWorld], List[str]]:
    paths = sorted(glob.glob(ws.path("worlds", f"{split}_*.txt")))
    if not paths:
        raise IoFailure(f"no {split} worlds under {ws.path('worlds')}; run gen-worlds first")
    worlds, ids = [], []
    for path in paths:
        world, found = world_service.load_world(path)
        ws.check_hash(found, path)
        worlds.append(world)
        ids.append(os.path.splitext(os.path.basename(path))[0])
    return worlds, ids


# ---------------------------------------------------------------------------
# Data stages
# ---------------------------------------------------------------------------

def collect_interaction(ws: Workspace) -> VideoDataset:
    worlds, ids = load_split(ws, "train")
    cfg = ws.stage("video", VideoConfig)
    dataset = video_service.collect_interaction(
        worlds, cfg.interaction_frames, ws.run.seed, cfg, ids, ws.run.jobs, ws.config_hash
    )
    video_service.save_dataset(dataset, ws.path("interaction.txt"))
    return dataset


def gen_videos(ws: Workspace) -> VideoDataset:
    worlds, ids = load_split(ws, "video")
    cfg = ws.stage("video", VideoConfig)
    dataset = video_service.generate_videos(worlds, cfg, ws.run.seed, ids, ws.run.jobs, ws.config_hash)
    video_service.save_dataset(dataset, ws.path("videos.txt"))
    return dataset


def _load_dataset(ws: Workspace, name: str) -> VideoDataset:
    path = ws.require(name)
    dataset = video_service.load_dataset(path)
    ws.check_hash(dataset.config_hash, path)
    return dataset


def load_inverse(ws: Workspace) -> inverse_service.InverseModel:
    path = ws.require("inverse.txt")
    model, found = inverse_service.load_inverse(path)
    ws.check_hash(found, path)
    return model


def train_inverse(ws: Workspace) -> inverse_service.InverseModel:
    interaction = _load_dataset(ws, "interaction.txt")
    model = inverse_service.train_inverse(interaction, ws.stage("inverse", InverseTrainConfig, seed=ws.run.seed))
    inverse_service.save_inverse(model, ws.path("inverse.txt"), ws.config_hash)
    write_report(ws.path("reports", "inverse.txt"), {
        "config_hash": ws.config_hash,
        "inverse.val_accuracy": f"{model.val_accuracy:.4f}",
        "inverse.transitions": str(interaction.n_pairs),
    })
    return model


def pseudo_label(ws: Workspace) -> VideoDataset:
    model = load_inverse(ws)
    videos = _load_dataset(ws, "videos.txt")
    labeled = inverse_service.pseudo_label(model, videos).derive(config_hash=ws.config_hash)
    video_service.save_dataset(labeled, ws.path("pseudo.txt"))
    if labeled.privileged:
        logger.info(f"Pseudo-label agreement with hidden actions: {inverse_service.label_agreement(labeled):.4f}")
    return labeled


def label_rewards(ws: Workspace, mode: str = "percentile") -> QuadrupleSet:
    labeled = _load_dataset(ws, "pseudo.txt")
    cfg = ws.stage("detector", DetectorConfig, seed=ws.run.seed)
    quads = detector_service.label_rewards(labeled, cfg, mode=mode, jobs=ws.run.jobs, config_hash=ws.config_hash)
    detector_service.save_quadruples(quads, ws.path("quads.txt"))
    return quads


def load_quadruples(ws: Workspace) -> QuadrupleSet:
    path = ws.require("quads.txt")
    quads = detector_service.load_quadruples(path)
    ws.check_hash(quads.config_hash, path)
    return quads


# ---------------------------------------------------------------------------
# Learning stages
# ---------------------------------------------------------------------------

def q_config(ws: Workspace) -> QTrainConfig:
    return ws.stage("qlearn", QTrainConfig, seed=ws.run.seed)


def train_q(ws: Workspace):
    quads = load_quadruples(ws)
    model = valuelearn_service.train_q(quads, q_config(ws))
    valuelearn_service.save_value_model(model, ws.path("q.txt"), "q", ws.config_hash)
    curve = model.training_log
    entries = {"config_hash": ws.config_hash, "traineval.quadruples": str(len(quads))}
    for iteration, residual in zip(curve.iterations, curve.residuals):
        entries[f"traineval.residual.{iteration}"] = f"{residual:.6g}"
    if curve.final_loss is not None:
        entries["traineval.final_loss"] = f"{curve.final_loss:.6g}"
    write_report(ws.path("reports", "traineval.txt"), entries)
    return model


def train_baseline(ws: Workspace, kind: str):
    if kind not in BASELINE_KINDS:
        raise InvalidParams(f"unknown baseline {kind}; expected one of {', '.join(BASELINE_KINDS)}")
    if kind == "strong":
        worlds, _ = load_split(ws, "video")
        model = valuelearn_service.train_strong_supervision(worlds, q_config(ws))
    elif kind == "strong_vlv":
        worlds, _ = load_split(ws, "video")
        cfg = q_config(ws)
        supervision = valuelearn_service.build_supervision(worlds, cfg.gamma, seed=ws.run.seed)
        model = valuelearn_service.train_q(load_quadruples(ws), cfg, supervision=supervision)
    elif kind == "bc":
        model = valuelearn_service.train_behavior_cloning(load_quadruples(ws), ws.stage("bc", BCTrainConfig, seed=ws.run.seed))
    else:
        cfg = ws.stage("value", ValueTrainConfig, seed=ws.run.seed)
        learner = valuelearn_service.policy_evaluation_td0 if kind == "td0" else valuelearn_service.policy_evaluation_mc
        model = learner(load_quadruples(ws), cfg)
    valuelearn_service.save_value_model(model, ws.path(f"{kind}.txt"), kind, ws.config_hash)
    return model


def load_model(ws: Workspace, name: str):
    path = ws.require(f"{name}.txt")
    model, _, found = valuelearn_service.load_value_model(path)
    ws.check_hash(found, path)
    return model


def _available_models(ws: Workspace) -> Dict[str, object]:
    models = {}
    for name in ("q", "bc", "strong", "strong_vlv"):
        if os.path.exists(ws.path(f"{name}.txt")):
            models[name] = load_model(ws, name)
        else:
            logger.warning(f"{name}.txt not found; methods that need it are skipped")
    return models


# ---------------------------------------------------------------------------
# Navigation stages
# ---------------------------------------------------------------------------

def calibrate_stop(ws: Workspace) -> StopConfig:
    worlds, _ = load_split(ws, "train")
    q = load_model(ws, "q")
    nav_cfg = ws.stage("nav", NavConfig)
    base_cfg = ws.stage("eval", EvalConfig, seed=ws.run.seed)
    # calibration episodes never coincide with evaluation episodes
    eval_cfg = base_cfg.model_copy(update={
        "seed": base_cfg.seed + 1,
        "n_per_class": max(1, nav_cfg.calibration_episodes // N_CATEGORIES),
    })
    episodes = evaluation_service.sample_episodes(worlds, eval_cfg)
    det_cfg = ws.stage("detector", DetectorConfig, seed=ws.run.seed)
    stop_cfg = StopConfig()

    def calibrate_one(ep: Episode):
        result = navigation_service.run_episode(
            worlds[ep.world_index], ep.start, ep.category, q, PolicyWeights(), stop_cfg,
            EpisodeMode.CALIBRATION, nav_cfg, det_cfg, seed=ep.seed, episode_id=ep.episode_id,
        )
        return ep, result

    with ThreadPoolExecutor(max_workers=ws.run.jobs) as pool:
        runs = list(pool.map(calibrate_one, episodes))
    by_category: Dict[Category, list] = {}
    for ep, result in runs:
        by_category.setdefault(ep.category, []).append((ep.shortest_distance, result))
    calibrated = navigation_service.calibrate_dc(by_category, nav_cfg.d_c_grid, stop_cfg.tau_c)
    navigation_service.save_stop_config(calibrated, ws.path("stop.txt"), ws.config_hash)
    return calibrated


def load_stop(ws: Workspace) -> StopConfig:
    path = ws.path("stop.txt")
    if not os.path.exists(path):
        logger.warning(f"{path} not found; using the default stopping distance")
        return StopConfig()
    cfg, found = navigation_service.load_stop_config(path)
    ws.check_hash(found, path)
    return cfg


def evaluation_episodes(ws: Workspace) -> Tuple[List[GridWorld], List[Episode]]:
    worlds, _ = load_split(ws, "test")
    episodes = evaluation_service.sample_episodes(worlds, ws.stage("eval", EvalConfig, seed=ws.run.seed))
    return worlds, episodes


def evaluate(ws: Workspace) -> Dict[str, str]:
    worlds, episodes = evaluation_episodes(ws)
    models = _available_models(ws)
    methods = [m for m in evaluation_service.standard_methods() if m.value_source is None or m.value_source in models]
    nav_cfg = ws.stage("nav", NavConfig)
    det_cfg = ws.stage("detector", DetectorConfig, seed=ws.run.seed)
    eval_cfg = ws.stage("eval", EvalConfig, seed=ws.run.seed)
    stop_cfg = load_stop(ws)

    frames = [
        evaluation_service.run_suite(methods, episodes, worlds, models, mode, stop_cfg, nav_cfg, det_cfg, ws.run.jobs)
        for mode in (EpisodeMode.ORACLE_STOP, EpisodeMode.POLICY_STOP)
    ]
    frame = pd.concat(frames, ignore_index=True)
    entries, table = evaluation_service.report_entries(frame, eval_cfg)
    entries.update(evaluation_service.ordering_entries(frame, ORDERING_PAIRS, eval_cfg))
    if "q" in models:
        video_worlds, _ = load_split(ws, "video")
        rho = evaluation_service.value_fidelity(models["q"], video_worlds, eval_cfg.fidelity_poses, ws.run.seed, q_config(ws).gamma)
        entries["fidelity.q.spearman"] = f"{rho:.4f}"
    entries = {"config_hash": ws.config_hash, "episodes": str(len(episodes)), **entries}
    write_report(ws.path("reports", "eval.txt"), entries, table)
    return entries


def branching(ws: Workspace) -> Dict[str, str]:
    from app.services.branching_service import branching_experiment

    entries = branching_experiment(ws.stage("branching", BranchingConfig, seed=ws.run.seed), q_config(ws).gamma)
    entries = {"config_hash": ws.config_hash, **entries}
    write_report(ws.path("reports", "branching.txt"), entries)
    return entries


def ablate(ws: Workspace) -> Dict[str, str]:
    from app.services.ablation_service import run_ablations

    entries, table = run_ablations(ws)
    entries = {"config_hash": ws.config_hash, **entries}
    write_report(ws.path("reports", "ablations.txt"), entries, table)
    return entries


def run_pipeline(ws: Workspace, skip: Sequence[str] = ()) -> Dict[str, str]:
    """Every stage in order; inputs must carry this run's config hash"""
    ws.strict = True
    steps = [
        ("gen-worlds", lambda: gen_worlds(ws)),
        ("collect-interaction", lambda: collect_interaction(ws)),
        ("gen-videos", lambda: gen_videos(ws)),
        ("train-inverse", lambda: train_inverse(ws)),
        ("pseudo-label", lambda: pseudo_label(ws)),
        ("label-rewards", lambda: label_rewards(ws)),
        ("train-q", lambda: train_q(ws)),
        *[(f"train-baseline-{kind}", (lambda k=kind: train_baseline(ws, k))) for kind in BASELINE_KINDS],
        ("calibrate-stop", lambda: calibrate_stop(ws)),
        ("eval", lambda: evaluate(ws)),
        ("ablate", lambda: ablate(ws)),
        ("branching", lambda: branching(ws)),
    ]
    report: Dict[str, str] = {}
    for name, step in steps:
        if name in skip:
            logger.info(f"Skipping {name}")
            continue
        logger.info(f"Pipeline stage {name}")
        result = step()
        if isinstance(result, dict) and name in ("eval", "ablate", "branching"):
            report.update(result)
    return report
