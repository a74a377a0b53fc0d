"""Simulated object detector and reward labeling of (pseudo-)labeled videos"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np

from app.config.hyperparameters import DETECTOR_CONFIG
from app.exceptions import EmptyDataset, FormatError, InvalidParams
from app.models.detection_model import Detection, DetectorConfig, QuadrupleSet
from app.models.sim_model import Pose, N_RAYS
from app.models.video_model import VideoDataset
from app.models.world_model import Category, GridWorld, N_CATEGORIES
from app.services import sim_service
from app.services.artifact_service import (
    format_floats,
    header_line,
    parse_floats,
    parse_header,
    read_lines,
    write_lines,
)
from app.services.world_service import distance_to_success

logger = logging.getLogger(__name__)

RngKey = Union[int, Sequence[int]]


def perfect_detector(seed: int = 0) -> DetectorConfig:
    return DetectorConfig(p_false_neg=0.0, p_false_pos=0.0, confidence_noise_sigma=0.0, seed=seed)


def detect(obs: np.ndarray, cfg: DetectorConfig, rng_key: RngKey) -> List[Detection]:
    """Noisy detections from the semantic rays; deterministic per (cfg.seed, rng_key)"""
    key = [int(rng_key)] if np.isscalar(rng_key) else [int(k) for k in rng_key]
    rng = np.random.default_rng([int(cfg.seed), *key])
    depths, classes = sim_service.decode(obs)
    detections = []
    for category in Category:
        # fixed number of draws per category keeps streams aligned across configs
        gate, noise, u_conf, u_dist = rng.random(), rng.standard_normal(), rng.random(), rng.random()
        hits = (classes == int(category)) & (depths < sim_service.MAX_DEPTH)
        if hits.any():
            if gate < cfg.p_false_neg:
                continue
            coverage = hits.sum() / N_RAYS
            confidence = coverage * (1.0 - depths[hits].min() / sim_service.MAX_DEPTH)
            confidence = float(np.clip(confidence + cfg.confidence_noise_sigma * noise, 0.0, 1.0))
            distance = max(float(np.median(depths[hits])), 1e-6)
            detections.append(Detection(category=category, confidence=confidence, est_distance=distance))
        elif gate < cfg.p_false_pos:
            detections.append(
                Detection(category=category, confidence=0.3 + 0.4 * u_conf, est_distance=0.5 + 4.5 * u_dist)
            )
    return detections


def best_confidences(detections: List[Detection]) -> np.ndarray:
    """Highest confidence per category, NaN where the category was not detected"""
    best = np.full(N_CATEGORIES, np.nan)
    for det in detections:
        c = int(det.category)
        if np.isnan(best[c]) or det.confidence > best[c]:
            best[c] = det.confidence
    return best


def _frame_confidences(args) -> np.ndarray:
    observations, traj_id, cfg = args
    return np.stack([best_confidences(detect(obs, cfg, (traj_id, t))) for t, obs in enumerate(observations)])


def reward_thresholds(confidences: np.ndarray, percentile: float = DETECTOR_CONFIG["reward_percentile"]) -> np.ndarray:
    """Per-category percentile of the positive detection confidences over the whole dataset (inf if none)"""
    thresholds = np.full(N_CATEGORIES, np.inf)
    for c in range(N_CATEGORIES):
        positives = confidences[:, c][~np.isnan(confidences[:, c])]
        if positives.size:
            thresholds[c] = np.percentile(positives, percentile)
    return thresholds


def _assemble(videos: VideoDataset, frame_rewards: List[np.ndarray], config_hash: str) -> QuadrupleSet:
    obs, nxt, actions, rewards, traj_ids, frame_idx = [], [], [], [], [], []
    for traj, reward in zip(videos.trajectories, frame_rewards):
        obs.append(traj.observations[:-1])
        nxt.append(traj.observations[1:])
        actions.append(traj.actions if traj.actions is not None else np.full(traj.length - 1, -1))
        rewards.append(reward[1:])
        traj_ids.append(np.full(traj.length - 1, traj.traj_id))
        frame_idx.append(np.arange(traj.length - 1))
    return QuadrupleSet(
        obs=np.vstack(obs),
        actions=np.concatenate(actions),
        next_obs=np.vstack(nxt),
        rewards=np.vstack(rewards),
        traj_ids=np.concatenate(traj_ids),
        frame_idx=np.concatenate(frame_idx),
        config_hash=config_hash,
    )


def label_rewards(
    videos: VideoDataset,
    cfg: Optional[DetectorConfig] = None,
    mode: str = "percentile",
    percentile: float = DETECTOR_CONFIG["reward_percentile"],
    threshold: float = DETECTOR_CONFIG["reward_threshold"],
    jobs: int = 1,
    config_hash: str = "",
) -> QuadrupleSet:
    """Reward frames are those with a top-percentile detection; each quadruple takes the next frame's reward"""
    cfg = cfg or DetectorConfig()
    if not videos.trajectories or videos.n_pairs == 0:
        raise EmptyDataset("reward labeling needs at least one frame pair")
    if mode not in ("percentile", "threshold"):
        raise InvalidParams(f"unknown reward mode {mode}")

    tasks = [(traj.observations, traj.traj_id, cfg) for traj in videos.trajectories]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_traj = list(pool.map(_frame_confidences, tasks))

    if mode == "percentile":
        cutoffs = reward_thresholds(np.vstack(per_traj), percentile)
    else:
        cutoffs = np.full(N_CATEGORIES, threshold)
    # NaN >= x is False, so undetected categories never reward
    with np.errstate(invalid="ignore"):
        frame_rewards = [(conf >= cutoffs).astype(np.float64) for conf in per_traj]

    quads = _assemble(videos, frame_rewards, config_hash)
    rates = ", ".join(f"{c.slug}={quads.rewards[:, int(c)].mean():.3f}" for c in Category)
    logger.info(f"Labeled {len(quads)} quadruples ({mode}); reward rates {rates}")
    return quads


def true_reward_label(
    videos: VideoDataset,
    worlds: Union[GridWorld, Mapping[str, GridWorld]],
    config_hash: str = "",
) -> QuadrupleSet:
    """Reward 1 where the hidden pose lies within 1 m of an instance; privileged handles only"""
    if not videos.trajectories or videos.n_pairs == 0:
        raise EmptyDataset("reward labeling needs at least one frame pair")
    frame_rewards = []
    for index, traj in enumerate(videos.trajectories):
        poses = videos.hidden_poses(index)
        if poses is None:
            raise InvalidParams(f"trajectory {traj.traj_id} has no hidden poses")
        world = worlds if isinstance(worlds, GridWorld) else worlds[traj.world_id]
        reward = np.zeros((traj.length, N_CATEGORIES))
        for t, (x, y, heading) in enumerate(poses):
            pose = Pose(x=float(x), y=float(y), heading=int(heading))
            for category in Category:
                reward[t, int(category)] = float(distance_to_success(world, pose, category) == 0.0)
        frame_rewards.append(reward)
    quads = _assemble(videos, frame_rewards, config_hash)
    logger.info(f"Labeled {len(quads)} quadruples from hidden poses")
    return quads


# ---------------------------------------------------------------------------
# Quadruple files
# ---------------------------------------------------------------------------

def save_quadruples(quads: QuadrupleSet, path: str) -> None:
    lines = [header_line("VLVQUAD", quads.config_hash or "-", quads.obs_dim)]
    has_index = quads.traj_ids is not None and quads.frame_idx is not None
    for i in range(len(quads)):
        parts = [
            format_floats(quads.obs[i]),
            str(int(quads.actions[i])),
            format_floats(quads.next_obs[i]),
            " ".join(str(int(v)) for v in quads.rewards[i]),
        ]
        if has_index:
            parts.append(f"{int(quads.traj_ids[i])} {int(quads.frame_idx[i])}")
        lines.append(" ".join(parts))
    write_lines(path, lines)
    logger.info(f"Saved {len(quads)} quadruples to {path}")


def parse_quadruples(lines: List[str]) -> QuadrupleSet:
    _, extra = parse_header(lines, "VLVQUAD")
    if len(extra) != 2:
        raise FormatError("quadruple header needs <config_hash> <dim>", 1)
    try:
        dim = int(extra[1])
    except ValueError:
        raise FormatError("dim must be an integer", 1)
    config_hash = "" if extra[0] == "-" else extra[0]
    base = 2 * dim + 1 + N_CATEGORIES
    obs, actions, nxt, rewards, traj_ids, frame_idx = [], [], [], [], [], []
    for number, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) not in (base, base + 2):
            raise FormatError(f"expected {base} or {base + 2} fields, found {len(tokens)}", number)
        values = parse_floats(tokens, number)
        obs.append(values[:dim])
        actions.append(int(values[dim]))
        nxt.append(values[dim + 1:2 * dim + 1])
        rewards.append(values[2 * dim + 1:base])
        if len(tokens) == base + 2:
            traj_ids.append(int(values[base]))
            frame_idx.append(int(values[base + 1]))
    if not actions:
        raise FormatError("no quadruples", len(lines) + 1)
    indexed = len(traj_ids) == len(actions)
    return QuadrupleSet(
        obs=np.vstack(obs),
        actions=np.array(actions),
        next_obs=np.vstack(nxt),
        rewards=np.vstack(rewards),
        traj_ids=np.array(traj_ids) if indexed else None,
        frame_idx=np.array(frame_idx) if indexed else None,
        config_hash=config_hash,
    )


def load_quadruples(path: str) -> QuadrupleSet:
    return parse_quadruples(read_lines(path))
